"""Ranking evaluation: AP@k / mAP, Spearman's rho and NDCG.

Standings arguments accept either a ``Standings`` or a plain sequence of
team ids in predicted (or actual) finishing order.
"""
from typing import Dict, Optional

import numpy as np
from pydantic import BaseModel

from season_ranker.data.ingest import Conference
from season_ranker.ranking.ranker import conference_split
from season_ranker.utils.errors import DataValidationError

RelevanceAssignment = Dict[str, int]


class Evaluation(BaseModel):
    ap: float
    spearman: float
    ndcg: float
    playoff_hits: Optional[int] = None
    playoff_total: Optional[int] = None
    # conference -> top-cutoff hits, empty for a single pool
    playoff_by_pool: Dict[str, int] = {}


def _order(ranking):
    team_ids = getattr(ranking, "team_ids", None)
    return tuple(team_ids if team_ids is not None else ranking)


def _same_teams(predicted, actual):
    predicted, actual = _order(predicted), _order(actual)
    if len(set(predicted)) != len(predicted):
        raise DataValidationError("predicted ranking lists a team twice")
    if set(predicted) != set(actual) or len(predicted) != len(actual):
        raise DataValidationError("predicted and actual rankings cover different teams")
    return predicted, actual


def _check_cutoff(k, n, name="k"):
    if not 1 <= k <= n:
        raise DataValidationError(f"{name}={k} outside 1..{n}")


def precision_at_k(predicted, actual, k):
    """Share of the actual top-k that the predicted top-k contains."""
    predicted, actual = _same_teams(predicted, actual)
    _check_cutoff(k, len(actual))
    return len(set(predicted[:k]) & set(actual[:k])) / k


def average_precision(predicted, actual, K):
    """Mean of precision@k for k = 1..K."""
    predicted, actual = _same_teams(predicted, actual)
    _check_cutoff(K, len(actual), "K")

    seen_predicted, seen_actual = set(), set()
    total = 0.0
    for k in range(1, K + 1):
        seen_predicted.add(predicted[k - 1])
        seen_actual.add(actual[k - 1])
        total += len(seen_predicted & seen_actual) / k
    return total / K


def mean_average_precision(*aps):
    """Arithmetic mean of per-conference APs; a single pool's AP passes through."""
    if not aps:
        raise DataValidationError("mean_average_precision needs at least one AP")
    return float(sum(aps) / len(aps))


def spearman_rs(predicted, actual):
    predicted, actual = _same_teams(predicted, actual)
    n = len(actual)
    if n == 1:
        return 1.0
    actual_rank = {team: rank for rank, team in enumerate(actual)}
    d = np.array([rank - actual_rank[team] for rank, team in enumerate(predicted)], dtype=float)
    return float(1.0 - 6.0 * np.sum(d * d) / (n * (n * n - 1)))


def assign_relevance(actual):
    """First place gets n, last place 1."""
    actual = _order(actual)
    n = len(actual)
    if n < 1:
        raise DataValidationError("cannot assign relevance to an empty ranking")
    return {team: n - rank for rank, team in enumerate(actual)}


def dcg(relevances, p):
    """Sum of (2^rel - 1) / log2(i + 1) over the first p positions."""
    relevances = np.asarray(relevances, dtype=float)[:p]
    if not relevances.size:
        return 0.0
    return float(np.sum((np.power(2.0, relevances) - 1.0) / np.log2(np.arange(2, relevances.size + 2))))


def ndcg(predicted, relevance, p):
    predicted = _order(predicted)
    if set(predicted) != set(relevance):
        raise DataValidationError("relevance assignment covers different teams")
    _check_cutoff(p, len(predicted), "p")
    ideal = sorted(relevance.values(), reverse=True)
    idcg = dcg(ideal, p)
    if idcg == 0.0:
        return 0.0
    return dcg([relevance[team] for team in predicted], p) / idcg


def ndcg_from_labels(scores, labels, p=None):
    """NDCG@p of one scored group, items ranked by descending score (stable)."""
    scores, labels = np.asarray(scores, dtype=float), np.asarray(labels, dtype=float)
    p = labels.size if p is None else min(p, labels.size)
    order = np.argsort(-scores, kind="stable")
    idcg = dcg(np.sort(labels)[::-1], p)
    if idcg == 0.0:
        return 0.0
    return dcg(labels[order], p) / idcg


def delta_ndcg_matrix(labels, scores):
    """|NDCG change| from swapping items i and j in the current score order.

    Full-list NDCG with gains 2^label - 1. All-zero gains give a zero matrix.
    """
    labels, scores = np.asarray(labels, dtype=float), np.asarray(scores, dtype=float)
    gains = np.power(2.0, labels) - 1.0
    idcg = dcg(np.sort(labels)[::-1], labels.size)
    if idcg == 0.0:
        return np.zeros((labels.size, labels.size))

    positions = np.empty(labels.size, dtype=int)
    positions[np.argsort(-scores, kind="stable")] = np.arange(labels.size)
    discounts = 1.0 / np.log2(positions + 2.0)
    return np.abs(np.subtract.outer(gains, gains) * np.subtract.outer(discounts, discounts)) / idcg


def playoff_hits(predicted, actual, cutoff):
    predicted, actual = _same_teams(predicted, actual)
    _check_cutoff(cutoff, len(actual), "cutoff")
    return len(set(predicted[:cutoff]) & set(actual[:cutoff]))


def _pool_metrics(predicted, actual, k):
    relevance = assign_relevance(actual)
    return (
        average_precision(predicted, actual, k),
        spearman_rs(predicted, actual),
        ndcg(predicted, relevance, len(actual)),
    )


def evaluate_standings(predicted, actual, league, ndcg_scope="conference"):
    """AP (mAP over conferences), rs and NDCG of predicted against actual standings.

    Conference leagues are evaluated per conference and averaged; with
    ``ndcg_scope="league"`` rs and NDCG use the merged list instead.
    """
    if ndcg_scope not in ("conference", "league"):
        raise DataValidationError(f"unknown ndcg_scope {ndcg_scope!r}")
    k = league.metric_cutoff_k
    cutoff = league.playoff_cutoff

    if not league.is_conference_league:
        ap, rs, gain = _pool_metrics(predicted, actual, k)
        return Evaluation(
            ap=ap,
            spearman=rs,
            ndcg=gain,
            playoff_hits=playoff_hits(predicted, actual, cutoff),
            playoff_total=cutoff,
        )

    pools = list(zip(conference_split(predicted, league), conference_split(actual, league)))
    per_pool = [_pool_metrics(pred, act, k) for pred, act in pools]
    by_pool = {
        conference.value: playoff_hits(pred, act, cutoff)
        for conference, (pred, act) in zip((Conference.EAST, Conference.WEST), pools)
    }

    if ndcg_scope == "league":
        rs = spearman_rs(predicted, actual)
        gain = ndcg(predicted, assign_relevance(actual), len(actual))
    else:
        rs = float(np.mean([pool[1] for pool in per_pool]))
        gain = float(np.mean([pool[2] for pool in per_pool]))

    return Evaluation(
        ap=mean_average_precision(*(pool[0] for pool in per_pool)),
        spearman=rs,
        ndcg=gain,
        playoff_hits=sum(by_pool.values()),
        playoff_total=cutoff * len(pools),
        playoff_by_pool=by_pool,
    )
