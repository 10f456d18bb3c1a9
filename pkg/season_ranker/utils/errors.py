"""Structured errors.

Every error renders to the ``{"error": ..., "message": ...}`` shape that the CLI
prints, with optional context fields (path, row, stage).
"""


class SeasonRankerError(Exception):
    error_type = "Runtime Error"
    exit_code = 2

    def __init__(self, message, **context):
        super().__init__(message)
        self.message = message
        self.context = {k: v for k, v in context.items() if v is not None}

    def to_dict(self):
        return {"error": self.error_type, "message": self.message, **self.context}

    def __str__(self):
        if not self.context:
            return self.message
        details = ", ".join(f"{k}={v}" for k, v in self.context.items())
        return f"{self.message} ({details})"


class DataValidationError(SeasonRankerError):
    error_type = "Validation Error"
    exit_code = 1


class ParseError(DataValidationError):
    error_type = "Parse Error"

    def __init__(self, message, path=None, row=None, **context):
        super().__init__(message, path=str(path) if path is not None else None, row=row, **context)
        self.path = path
        self.row = row


class TrainingAbortedError(SeasonRankerError):
    error_type = "Training Aborted"


class StageError(SeasonRankerError):
    """Wraps a failure with the pipeline stage it happened in."""

    error_type = "Stage Failure"

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}", stage=stage)
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1 if isinstance(cause, (ValueError, FileNotFoundError)) else 2)
