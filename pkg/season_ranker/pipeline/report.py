"""Results tables and standings files."""
import json
import os
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from season_ranker.data.ingest import Sport
from season_ranker.ranking.ranker import Standings, standings_from_order, write_standings_csv
from season_ranker.utils.errors import DataValidationError, SeasonRankerError
from season_ranker.utils.logging_config import logger


class ReportFormat(str, Enum):
    TEXT = "text"
    CSV = "csv"
    JSON = "json"


class RowKind(str, Enum):
    MODEL = "model"
    BASELINE = "baseline"


class MetricRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    kind: RowKind = RowKind.MODEL
    runs: int = 1
    ap: float
    spearman: float
    ndcg: float
    # population standard deviations, only for rows averaged over several runs
    ap_std: Optional[float] = None
    spearman_std: Optional[float] = None
    ndcg_std: Optional[float] = None
    playoff_hits: Optional[float] = None
    playoff_total: Optional[int] = None
    playoff_by_pool: Dict[str, float] = {}

    @classmethod
    def from_evaluations(cls, name, evaluations, kind=RowKind.MODEL):
        if not evaluations:
            raise DataValidationError(f"no evaluations for {name}")
        values = {
            metric: np.array([getattr(evaluation, metric) for evaluation in evaluations], dtype=float)
            for metric in ("ap", "spearman", "ndcg")
        }
        spread = len(evaluations) > 1
        hits = [e.playoff_hits for e in evaluations if e.playoff_hits is not None]
        pools = sorted({pool for e in evaluations for pool in e.playoff_by_pool})
        return cls(
            name=name,
            kind=kind,
            runs=len(evaluations),
            **{metric: float(v.mean()) for metric, v in values.items()},
            **{f"{metric}_std": float(v.std()) if spread else None for metric, v in values.items()},
            playoff_hits=float(np.mean(hits)) if hits else None,
            playoff_total=evaluations[0].playoff_total,
            playoff_by_pool={
                pool: float(np.mean([e.playoff_by_pool[pool] for e in evaluations if pool in e.playoff_by_pool]))
                for pool in pools
            },
        )


METRIC_FIELDS = ("ap", "spearman", "ndcg")


class ReferenceCheck(BaseModel):
    """One measured metric against a published reference value."""

    model_config = ConfigDict(frozen=True)

    model: str
    metric: str
    target: float
    measured: float
    tolerance: float
    agrees: bool


def reference_checks(rows, targets, tolerance=0.05):
    """Checks rows against ``{model: {metric: value}}``; models without a row are skipped."""
    by_name = {row.name: row for row in rows}
    checks = []
    for model, metrics in sorted(targets.items()):
        row = by_name.get(model)
        if row is None:
            continue
        for metric, target in sorted(metrics.items()):
            if metric not in METRIC_FIELDS:
                raise DataValidationError(f"unknown reference metric {metric!r} for {model}")
            measured = getattr(row, metric)
            checks.append(
                ReferenceCheck(
                    model=model,
                    metric=metric,
                    target=target,
                    measured=measured,
                    tolerance=tolerance,
                    agrees=abs(measured - target) <= tolerance,
                )
            )
    return tuple(checks)


class Report(BaseModel):
    model_config = ConfigDict(frozen=True)

    sport: Sport
    train_seasons: Tuple[int, ...]
    test_season: int
    rows: Tuple[MetricRow, ...]
    standings: Dict[str, Standings] = {}
    conferences: Dict[str, str] = {}
    reference: Tuple[ReferenceCheck, ...] = ()

    @property
    def ap_label(self):
        """mAP when conference APs are averaged, plain AP for a single pool."""
        return "mAP" if self.sport is Sport.BASKETBALL else "AP"

    def row(self, name):
        for row in self.rows:
            if row.name == name:
                return row
        raise KeyError(name)


def format_metric(mean, std=None):
    return f"{mean:.3f}" if std is None else f"{mean:.3f} ±{std:.3f}"


def _format_hits(hits):
    return f"{hits:.0f}" if float(hits).is_integer() else f"{hits:.1f}"


def _format_playoffs(row):
    """Playoff hits as 8/8 for a single pool, or E 8/8, W 7/8 per conference."""
    if row.playoff_hits is None:
        return "-"
    if not row.playoff_by_pool:
        return f"{_format_hits(row.playoff_hits)}/{row.playoff_total}"
    per_pool = row.playoff_total // len(row.playoff_by_pool)
    return ", ".join(
        f"{pool[0]} {_format_hits(hits)}/{per_pool}" for pool, hits in sorted(row.playoff_by_pool.items())
    )


def report_table(report):
    """Model | AP or mAP | r_s | NDCG | Playoffs, formatted for display."""
    return pd.DataFrame(
        {
            "Model": [row.name for row in report.rows],
            report.ap_label: [format_metric(row.ap, row.ap_std) for row in report.rows],
            "r_s": [format_metric(row.spearman, row.spearman_std) for row in report.rows],
            "NDCG": [format_metric(row.ndcg, row.ndcg_std) for row in report.rows],
            "Playoffs": [_format_playoffs(row) for row in report.rows],
        }
    )


def render_text(report):
    seasons = ", ".join(str(season) for season in report.train_seasons)
    title = f"{report.sport.value.capitalize()} results: trained on {seasons}, tested on {report.test_season}"
    text = f"{title}\n\n{report_table(report).to_string(index=False)}\n"
    if report.reference:
        lines = [
            f"  {check.model} {report.metric_label(check.metric)} {check.measured:.3f} vs {check.target:.3f} "
            f"(±{check.tolerance:g}): {'agrees' if check.agrees else 'differs'}"
            for check in report.reference
        ]
        text += "\nReference agreement\n" + "\n".join(lines) + "\n"
    return text


def report_frame(report):
    """Numeric table behind the CSV output."""
    label = report.ap_label
    pools = sorted({pool for row in report.rows for pool in row.playoff_by_pool})
    return pd.DataFrame(
        [
            {
                "model": row.name,
                "kind": row.kind.value,
                "runs": row.runs,
                label: row.ap,
                f"{label}_std": row.ap_std,
                "r_s": row.spearman,
                "r_s_std": row.spearman_std,
                "NDCG": row.ndcg,
                "NDCG_std": row.ndcg_std,
                "playoff_hits": row.playoff_hits,
                "playoff_total": row.playoff_total,
                **{f"playoff_{pool}": row.playoff_by_pool.get(pool) for pool in pools},
            }
            for row in report.rows
        ]
    )


def _prepare_dir(out_dir):
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise SeasonRankerError(f"cannot create output directory {out_dir}: {e}", path=out_dir)
    if not os.access(out_dir, os.W_OK):
        raise SeasonRankerError(f"output directory is not writable: {out_dir}", path=out_dir)


def emit_report(report, fmt, out_dir):
    """Writes report.txt, report.csv or report.json into ``out_dir``; returns the path."""
    fmt = ReportFormat(fmt)
    _prepare_dir(out_dir)
    path = os.path.join(out_dir, f"report.{'txt' if fmt is ReportFormat.TEXT else fmt.value}")

    if fmt is ReportFormat.TEXT:
        with open(path, "w", encoding="utf-8") as file:
            file.write(render_text(report))
    elif fmt is ReportFormat.CSV:
        report_frame(report).to_csv(path, index=False, float_format="%.17g")
    else:
        with open(path, "w", encoding="utf-8") as file:
            json.dump(report.model_dump(mode="json"), file, sort_keys=True, indent=2)
            file.write("\n")

    logger.info(f"✅ Wrote {fmt.value} report to {path}")
    return path


def read_report_json(path):
    if not os.path.exists(path):
        raise DataValidationError(f"report not found: {path}", path=path)
    with open(path, encoding="utf-8") as file:
        return Report.model_validate(json.load(file))


def conference_standings(standings, conferences):
    """Per-conference standings keeping the merged order, ranks renumbered."""
    split = {}
    for conference in sorted(set(conferences.values())):
        members = [entry for entry in standings.entries if conferences.get(entry.team_id) == conference]
        tallies = None if any(e.tally is None for e in members) else {e.team_id: e.tally for e in members}
        split[conference] = standings_from_order(
            [entry.team_id for entry in members], tag=f"{standings.tag}-{conference}", tallies=tallies
        )
    return split


def write_standings_files(report, out_dir):
    """One CSV per standings list; basketball adds East and West files for each."""
    directory = os.path.join(out_dir, "standings")
    _prepare_dir(directory)
    written = []
    for tag, standings in report.standings.items():
        written.append(write_standings_csv(standings, os.path.join(directory, f"{tag}.csv")))
        if report.sport is Sport.BASKETBALL and report.conferences:
            for conference, split in conference_standings(standings, report.conferences).items():
                written.append(write_standings_csv(split, os.path.join(directory, f"{tag}_{conference}.csv")))
    logger.info(f"✅ Wrote {len(written)} standings files to {directory}")
    return written
