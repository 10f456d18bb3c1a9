"""Least-squares regression trees fitted to pseudo-residuals."""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from season_ranker.utils.errors import DataValidationError

LEAF = -1


@dataclass(frozen=True)
class TreeNode:
    """One node; ``feature == LEAF`` marks a leaf. Rows with x[feature] <= threshold go left."""

    feature: int
    threshold: float
    left: int
    right: int
    value: float
    n_samples: int

    @property
    def is_leaf(self):
        return self.feature == LEAF


@dataclass(frozen=True)
class RegressionTree:
    """Nodes stored in pre-order; node 0 is the root."""

    nodes: Tuple[TreeNode, ...]
    n_features: int

    @property
    def leaves(self):
        return tuple(i for i, node in enumerate(self.nodes) if node.is_leaf)

    def depth(self, index=0):
        node = self.nodes[index]
        if node.is_leaf:
            return 0
        return 1 + max(self.depth(node.left), self.depth(node.right))

    def apply(self, rows):
        """Index of the leaf node each row lands in."""
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        if rows.shape[1] != self.n_features:
            raise DataValidationError(f"tree expects {self.n_features} features, got {rows.shape[1]}")

        feature = np.array([node.feature for node in self.nodes])
        threshold = np.array([node.threshold for node in self.nodes])
        left = np.array([node.left for node in self.nodes])
        right = np.array([node.right for node in self.nodes])

        at = np.zeros(rows.shape[0], dtype=int)
        active = feature[at] != LEAF
        while np.any(active):
            idx = np.flatnonzero(active)
            goes_left = rows[idx, feature[at[idx]]] <= threshold[at[idx]]
            at[idx] = np.where(goes_left, left[at[idx]], right[at[idx]])
            active = feature[at] != LEAF
        return at

    def predict(self, rows):
        values = np.array([node.value for node in self.nodes])
        return values[self.apply(rows)]


def best_split(rows, residuals, min_samples_leaf):
    """Exhaustive search for the split maximizing the between-child sum of squares.

    Candidate thresholds are midpoints between consecutive distinct values.
    Ties go to the lowest feature index, then the lowest threshold.
    Returns (feature, threshold, gain) or None.
    """
    n, n_features = rows.shape
    total = residuals.sum()
    best = None
    for feature in range(n_features):
        order = np.argsort(rows[:, feature], kind="stable")
        xs, rs = rows[order, feature], residuals[order]

        n_left = np.arange(1, n)
        n_right = n - n_left
        sum_left = np.cumsum(rs)[:-1]
        sum_right = total - sum_left
        gain = sum_left**2 / n_left + sum_right**2 / n_right - total**2 / n

        valid = (xs[:-1] < xs[1:]) & (n_left >= min_samples_leaf) & (n_right >= min_samples_leaf)
        if not np.any(valid):
            continue
        gain = np.where(valid, gain, -np.inf)
        position = int(np.argmax(gain))
        if best is None or gain[position] > best[2]:
            best = (feature, float((xs[position] + xs[position + 1]) / 2.0), float(gain[position]))
    return best


def fit_tree(rows, residuals, max_depth=3, min_samples_leaf=2):
    """Greedy least-squares tree; leaves hold the mean residual of their rows.

    A node becomes a leaf at ``max_depth``, when no split keeps
    ``min_samples_leaf`` rows on both sides, or when the best split gains nothing.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    residuals = np.asarray(residuals, dtype=float)
    if rows.shape[0] != residuals.size:
        raise DataValidationError(f"{rows.shape[0]} rows but {residuals.size} residuals")
    if not residuals.size:
        raise DataValidationError("cannot fit a tree to zero rows")
    if max_depth < 0 or min_samples_leaf < 1:
        raise DataValidationError("max_depth must be >= 0 and min_samples_leaf >= 1")
    if not (np.all(np.isfinite(rows)) and np.all(np.isfinite(residuals))):
        raise DataValidationError("tree inputs must be finite")

    nodes = []

    def grow(index, depth):
        node_rows, node_residuals = rows[index], residuals[index]
        value = float(np.mean(node_residuals))
        position = len(nodes)
        nodes.append(None)

        split = None
        if depth < max_depth and np.ptp(node_residuals) > 0:
            split = best_split(node_rows, node_residuals, min_samples_leaf)
            parent_sse = float(np.sum((node_residuals - value) ** 2))
            if split is not None and not split[2] > 1e-12 * parent_sse:
                split = None

        if split is None:
            nodes[position] = TreeNode(LEAF, 0.0, LEAF, LEAF, value, index.size)
            return position

        feature, threshold, _ = split
        goes_left = node_rows[:, feature] <= threshold
        left = grow(index[goes_left], depth + 1)
        right = grow(index[~goes_left], depth + 1)
        nodes[position] = TreeNode(feature, threshold, left, right, value, index.size)
        return position

    grow(np.arange(residuals.size), 0)
    return RegressionTree(nodes=tuple(nodes), n_features=rows.shape[1])
