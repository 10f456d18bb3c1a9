"""Losses, initial fits and gradients for the boosting objectives.

Ranking objectives work on query groups (one season of games per group)
and only compare items inside the same group. Gradients here are
dL/dF; pseudo-residuals are their negation.
"""
from enum import Enum

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import expit

from season_ranker.ranking.metrics import delta_ndcg_matrix
from season_ranker.utils.errors import DataValidationError

STEP_BOUNDS = (-10.0, 10.0)
STEP_TOLERANCE = 1e-8


class Objective(str, Enum):
    SQUARED_ERROR = "squared_error"
    LOGISTIC = "logistic"
    PAIRWISE_LOGISTIC = "pairwise_logistic"
    NDCG_SCALED_PAIRWISE = "ndcg_scaled_pairwise"

    @property
    def is_ranking(self):
        return self in (Objective.PAIRWISE_LOGISTIC, Objective.NDCG_SCALED_PAIRWISE)


def bounded_minimum(function):
    """Golden-section/parabolic search for the minimizer on STEP_BOUNDS."""
    result = minimize_scalar(
        function, bounds=STEP_BOUNDS, method="bounded", options={"xatol": STEP_TOLERANCE, "maxiter": 500}
    )
    return float(result.x)


def at_bracket_edge(step):
    return min(abs(step - STEP_BOUNDS[0]), abs(step - STEP_BOUNDS[1])) < 1e-5


# ---------------------------------------------------------------------------
# Pointwise objectives
# ---------------------------------------------------------------------------


def pointwise_loss(labels, predictions, objective):
    """Summed loss; squared error is (y - F)^2 / 2, logistic the binary Log Loss in log-odds."""
    labels, predictions = np.asarray(labels, dtype=float), np.asarray(predictions, dtype=float)
    objective = Objective(objective)
    if objective is Objective.SQUARED_ERROR:
        return float(0.5 * np.sum((labels - predictions) ** 2))
    if objective is Objective.LOGISTIC:
        return float(np.sum(np.logaddexp(0.0, predictions) - labels * predictions))
    raise DataValidationError(f"{objective.value} is not a pointwise objective")


def fit_constant(labels, objective):
    """F0 = argmin_c sum L(y_i, c).

    Ranking losses only see score differences, so their constant is 0.
    """
    labels = np.asarray(labels, dtype=float)
    if not labels.size:
        raise DataValidationError("cannot fit a constant to zero labels")
    objective = Objective(objective)
    if objective is Objective.SQUARED_ERROR:
        return float(np.mean(labels))
    if objective.is_ranking:
        return 0.0
    return bounded_minimum(lambda c: pointwise_loss(labels, np.full(labels.size, c), objective))


# ---------------------------------------------------------------------------
# Pairwise objectives
# ---------------------------------------------------------------------------


def group_pairs(labels, group_ids=None):
    """Indices (i, j) of every ordered pair in one group with label_i > label_j."""
    labels = np.asarray(labels, dtype=float)
    group_ids = np.zeros(labels.size, dtype=int) if group_ids is None else np.asarray(group_ids)
    heads, tails = [], []
    for group in np.unique(group_ids):
        members = np.flatnonzero(group_ids == group)
        better = labels[members][:, None] > labels[members][None, :]
        i, j = np.nonzero(better)
        heads.append(members[i])
        tails.append(members[j])
    if not heads:
        return np.empty(0, dtype=int), np.empty(0, dtype=int)
    return np.concatenate(heads), np.concatenate(tails)


def pair_weights(objective, labels, scores, heads, tails, group_ids=None):
    """1 per pair, or |delta NDCG| of swapping the pair in the current score order."""
    if Objective(objective) is Objective.PAIRWISE_LOGISTIC:
        return np.ones(heads.size)

    labels, scores = np.asarray(labels, dtype=float), np.asarray(scores, dtype=float)
    group_ids = np.zeros(labels.size, dtype=int) if group_ids is None else np.asarray(group_ids)
    weights = np.empty(heads.size)
    position = np.empty(labels.size, dtype=int)
    for group in np.unique(group_ids):
        members = np.flatnonzero(group_ids == group)
        position[members] = np.arange(members.size)
        in_group = group_ids[heads] == group
        delta = delta_ndcg_matrix(labels[members], scores[members])
        weights[in_group] = delta[position[heads[in_group]], position[tails[in_group]]]
    return weights


def pair_gradients(scores, heads, tails, weights, sigma):
    """Per-item dL/ds from pair terms g = -sigma * w / (1 + exp(sigma * (s_i - s_j)))."""
    scores = np.asarray(scores, dtype=float)
    g = -sigma * weights * expit(-sigma * (scores[heads] - scores[tails]))
    gradient = np.bincount(heads, weights=g, minlength=scores.size)
    gradient -= np.bincount(tails, weights=g, minlength=scores.size)
    return gradient


def pairwise_loss(scores, heads, tails, weights, sigma):
    scores = np.asarray(scores, dtype=float)
    return float(np.sum(weights * np.logaddexp(0.0, -sigma * (scores[heads] - scores[tails]))))


def pairwise_logistic_gradients(scores, labels, sigma=1.0):
    """Pairwise Log Loss gradients within one group; zero when labels are all equal."""
    heads, tails = group_pairs(labels)
    return pair_gradients(scores, heads, tails, np.ones(heads.size), sigma)


def ndcg_scaled_pairwise_gradients(scores, labels, sigma=1.0):
    """Pairwise Log Loss gradients, each pair scaled by its |delta NDCG|."""
    heads, tails = group_pairs(labels)
    weights = pair_weights(Objective.NDCG_SCALED_PAIRWISE, labels, scores, heads, tails)
    return pair_gradients(scores, heads, tails, weights, sigma)


# ---------------------------------------------------------------------------
# Shared entry points
# ---------------------------------------------------------------------------


def pseudo_residuals(labels, predictions, objective, group_ids=None, sigma=1.0):
    """r_i = -dL/dF(x_i) at the current predictions."""
    labels, predictions = np.asarray(labels, dtype=float), np.asarray(predictions, dtype=float)
    if labels.shape != predictions.shape:
        raise DataValidationError(f"{labels.size} labels but {predictions.size} predictions")
    if not np.all(np.isfinite(predictions)):
        raise DataValidationError("non-finite prediction")

    objective = Objective(objective)
    if objective is Objective.SQUARED_ERROR:
        return labels - predictions
    if objective is Objective.LOGISTIC:
        return labels - expit(predictions)

    heads, tails = group_pairs(labels, group_ids)
    weights = pair_weights(objective, labels, predictions, heads, tails, group_ids)
    return -pair_gradients(predictions, heads, tails, weights, sigma)
