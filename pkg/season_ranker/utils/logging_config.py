import logging
import os
from logging.handlers import RotatingFileHandler

LOG_DIR = "logs"
LOG_FILE_NAME = "application.log"
LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"

logger = logging.getLogger("season_ranker")


def configure_logging(level="INFO", log_dir=LOG_DIR):
    """Attach the rotating file handler and console handler to the package logger.

    Called once by the CLI. Library code only ever uses ``logger``.
    """
    os.makedirs(log_dir, exist_ok=True)
    log_file = os.path.join(log_dir, LOG_FILE_NAME)

    # Configure rotating logs (max size = 5MB, keep last 5 log files)
    file_handler = RotatingFileHandler(
        log_file, maxBytes=5 * 1024 * 1024, backupCount=5, encoding="utf-8"
    )
    file_handler.setFormatter(logging.Formatter(LOG_FORMAT))

    stream_handler = logging.StreamHandler()
    stream_handler.setFormatter(logging.Formatter(LOG_FORMAT))

    logger.handlers.clear()
    logger.addHandler(file_handler)
    logger.addHandler(stream_handler)
    logger.setLevel(level.upper() if isinstance(level, str) else level)
    logger.propagate = False

    logger.info(f"📌 Logging initialized. Logs will be saved in '{log_file}'")
    return logger
