"""Gradient-boosted regression trees.

F0 is the best constant. Each round fits a least-squares tree to the
pseudo-residuals, line-searches one step per leaf and adds
learning_rate * step(leaf(x)) to the ensemble.
"""
import json
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from season_ranker.models.objectives import (
    Objective,
    at_bracket_edge,
    bounded_minimum,
    fit_constant,
    group_pairs,
    pair_gradients,
    pair_weights,
    pairwise_loss,
    pointwise_loss,
    pseudo_residuals,
)
from season_ranker.models.tree import LEAF, RegressionTree, TreeNode, fit_tree
from season_ranker.utils.errors import DataValidationError, ParseError
from season_ranker.utils.logging_config import logger

ENSEMBLE_FORMAT = "season-ranker-gbm/1"


class BoostConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    rounds: int = Field(100, ge=0)
    max_depth: int = Field(3, ge=0)
    min_samples_leaf: int = Field(2, ge=1)
    # 0 is accepted and leaves every prediction at F0
    learning_rate: float = Field(0.1, ge=0, le=1)
    objective: Objective = Objective.NDCG_SCALED_PAIRWISE
    sigma: float = Field(1.0, gt=0)
    rng_seed: int = 0


@dataclass(frozen=True)
class QueryGroup:
    """Items scored and sorted together; for game data one season of games."""

    key: str
    rows: np.ndarray
    labels: np.ndarray


@dataclass(frozen=True)
class BoostedStage:
    tree: RegressionTree
    learning_rate: float
    steps: Dict[int, float]

    def contribution(self, rows):
        leaves = self.tree.apply(rows)
        step = np.zeros(len(self.tree.nodes))
        for leaf, gamma in self.steps.items():
            step[leaf] = gamma
        return self.learning_rate * step[leaves]


@dataclass(frozen=True)
class BoostedEnsemble:
    f0: float
    stages: Tuple[BoostedStage, ...]
    objective: Objective
    n_features: int
    config: BoostConfig
    history: Tuple[float, ...] = ()


@dataclass(frozen=True)
class _PairContext:
    heads: np.ndarray
    tails: np.ndarray
    weights: np.ndarray
    sigma: float


def stack_groups(groups):
    """Rows, labels and per-row group ids from a list of QueryGroups."""
    groups = list(groups)
    if not groups:
        raise DataValidationError("no query groups to fit")
    keys = [group.key for group in groups]
    if len(set(keys)) != len(keys):
        raise DataValidationError(f"duplicate query group keys: {keys}")
    rows = np.vstack([np.atleast_2d(np.asarray(group.rows, dtype=float)) for group in groups])
    labels = np.concatenate([np.asarray(group.labels, dtype=float) for group in groups])
    group_ids = np.concatenate([np.full(len(group.labels), i) for i, group in enumerate(groups)])
    return rows, labels, group_ids


def _prepare(data, labels, group_ids):
    if labels is None:
        return stack_groups(data)
    rows = np.atleast_2d(np.asarray(data, dtype=float))
    labels = np.asarray(labels, dtype=float)
    if rows.shape[0] != labels.size:
        raise DataValidationError(f"{rows.shape[0]} rows but {labels.size} labels")
    group_ids = np.zeros(labels.size, dtype=int) if group_ids is None else np.asarray(group_ids)
    if group_ids.size != labels.size:
        raise DataValidationError(f"{labels.size} labels but {group_ids.size} group ids")
    return rows, labels, group_ids


def _pair_context(objective, labels, predictions, group_ids, sigma, pairs=None):
    heads, tails = pairs if pairs is not None else group_pairs(labels, group_ids)
    weights = pair_weights(objective, labels, predictions, heads, tails, group_ids)
    return _PairContext(heads, tails, weights, sigma)


def objective_value(labels, predictions, objective, context=None):
    if Objective(objective).is_ranking:
        return pairwise_loss(predictions, context.heads, context.tails, context.weights, context.sigma)
    return pointwise_loss(labels, predictions, objective)


def line_search_leaf_steps(
    tree, rows, labels, predictions, objective, group_ids=None, sigma=1.0, closed_form=True, context=None
):
    """Per-leaf step minimizing the loss over the rows that land in the leaf.

    Squared error uses the closed-form mean residual unless ``closed_form``
    is False; everything else runs the bounded scalar search on [-10, 10].
    Ranking losses only count pairs with exactly one item in the leaf.
    """
    labels, predictions = np.asarray(labels, dtype=float), np.asarray(predictions, dtype=float)
    objective = Objective(objective)
    if objective.is_ranking and context is None:
        context = _pair_context(objective, labels, predictions, group_ids, sigma)

    leaf_of_row = tree.apply(rows)
    steps, edge_hits = {}, 0
    for leaf in tree.leaves:
        in_leaf = leaf_of_row == leaf
        if not np.any(in_leaf):
            raise DataValidationError(f"leaf {leaf} holds no rows")

        if objective is Objective.SQUARED_ERROR and closed_form:
            steps[leaf] = float(np.mean(labels[in_leaf] - predictions[in_leaf]))
            continue

        if objective.is_ranking:
            direction = in_leaf[context.heads].astype(float) - in_leaf[context.tails]
            touched = direction != 0
            if not np.any(touched):
                steps[leaf] = 0.0
                continue
            base = predictions[context.heads[touched]] - predictions[context.tails[touched]]
            weights, direction = context.weights[touched], direction[touched]

            def loss(gamma):
                return float(np.sum(weights * np.logaddexp(0.0, -context.sigma * (base + gamma * direction))))

        else:
            y, f = labels[in_leaf], predictions[in_leaf]

            def loss(gamma):
                return pointwise_loss(y, f + gamma, objective)

        step = bounded_minimum(loss)
        if at_bracket_edge(step):
            edge_hits += 1
        steps[leaf] = step

    if edge_hits:
        logger.warning(f"⚠️ Line search hit the [-10, 10] bracket edge in {edge_hits} of {len(steps)} leaves")
    return steps


def boost_fit(data, labels=None, config=None, group_ids=None):
    """Fits the ensemble to QueryGroups, or to rows with labels (optionally grouped)."""
    config = config or BoostConfig()
    rows, labels, group_ids = _prepare(data, labels, group_ids)
    if not (np.all(np.isfinite(rows)) and np.all(np.isfinite(labels))):
        raise DataValidationError("boosting inputs must be finite")
    objective = config.objective

    f0 = fit_constant(labels, objective)
    predictions = np.full(labels.size, f0)
    pairs = group_pairs(labels, group_ids) if objective.is_ranking else None
    context = None
    if pairs is not None:
        context = _pair_context(objective, labels, predictions, group_ids, config.sigma, pairs)

    history = [objective_value(labels, predictions, objective, context)]
    stages = []
    for round_index in range(config.rounds):
        if context is not None:
            residuals = -pair_gradients(predictions, context.heads, context.tails, context.weights, config.sigma)
        else:
            residuals = pseudo_residuals(labels, predictions, objective)

        tree = fit_tree(rows, residuals, config.max_depth, config.min_samples_leaf)
        steps = line_search_leaf_steps(
            tree, rows, labels, predictions, objective, group_ids, config.sigma, context=context
        )
        stage = BoostedStage(tree=tree, learning_rate=config.learning_rate, steps=steps)
        predictions = predictions + stage.contribution(rows)
        stages.append(stage)

        if context is not None and objective is Objective.NDCG_SCALED_PAIRWISE:
            context = _pair_context(objective, labels, predictions, group_ids, config.sigma, pairs)
        history.append(objective_value(labels, predictions, objective, context))
        logger.debug(
            f"👉 Round {round_index + 1}/{config.rounds}: {len(tree.leaves)} leaves, "
            f"{objective.value} {history[-1]:.6f}"
        )
        if objective is Objective.SQUARED_ERROR and history[-1] > history[-2] * (1 + 1e-9) + 1e-12:
            logger.warning(f"⚠️ Squared-error loss rose in round {round_index + 1}: {history[-2]} -> {history[-1]}")

    logger.info(f"✅ Boosted {config.rounds} rounds ({objective.value}), final objective {history[-1]:.6f}")
    return BoostedEnsemble(
        f0=f0,
        stages=tuple(stages),
        objective=objective,
        n_features=rows.shape[1],
        config=config,
        history=tuple(history),
    )


def _check_width(ensemble, rows):
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[1] != ensemble.n_features:
        raise DataValidationError(f"ensemble expects {ensemble.n_features} features, got {rows.shape[1]}")
    return rows


def predict(ensemble, rows):
    """Raw ensemble scores, one per row."""
    rows = _check_width(ensemble, rows)
    scores = np.full(rows.shape[0], ensemble.f0)
    for stage in ensemble.stages:
        scores += stage.contribution(rows)
    return scores


def staged_predict(ensemble, rows):
    """Yields the scores after each round, starting with round 1."""
    rows = _check_width(ensemble, rows)
    scores = np.full(rows.shape[0], ensemble.f0)
    for stage in ensemble.stages:
        scores = scores + stage.contribution(rows)
        yield scores


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------


def save_ensemble(path, ensemble):
    """One header block, then per tree a ``tree`` line and its nodes in pre-order.

    Split lines are ``S feature threshold``, leaf lines ``L value step``.
    Floats are written with repr so the round trip is exact.
    """
    lines = [
        ENSEMBLE_FORMAT,
        f"objective {ensemble.objective.value}",
        f"f0 {ensemble.f0!r}",
        f"n_features {ensemble.n_features}",
        f"config {json.dumps(ensemble.config.model_dump(mode='json'), sort_keys=True)}",
        "history " + " ".join(repr(float(value)) for value in ensemble.history),
        f"rounds {len(ensemble.stages)}",
    ]
    for stage in ensemble.stages:
        lines.append(f"tree {stage.learning_rate!r} {len(stage.tree.nodes)}")
        for index, node in enumerate(stage.tree.nodes):
            if node.is_leaf:
                lines.append(f"L {node.value!r} {stage.steps[index]!r} {node.n_samples}")
            else:
                lines.append(f"S {node.feature} {node.threshold!r} {node.value!r} {node.n_samples}")

    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")
    logger.info(f"✅ Ensemble saved to {path}")
    return path


def _read_tree(lines, start, count, path):
    nodes, steps = [None] * count, {}
    cursor = [start]

    def build():
        index = cursor[0] - start
        if index >= count:
            raise ParseError("tree ends before its nodes do", path=path, row=cursor[0] + 1)
        fields = lines[cursor[0]].split()
        cursor[0] += 1
        if fields[0] == "L":
            nodes[index] = TreeNode(LEAF, 0.0, LEAF, LEAF, float(fields[1]), int(fields[3]))
            steps[index] = float(fields[2])
            return index
        left = build()
        right = build()
        nodes[index] = TreeNode(int(fields[1]), float(fields[2]), left, right, float(fields[3]), int(fields[4]))
        return index

    build()
    if cursor[0] - start != count:
        raise ParseError("tree node count does not match its header", path=path, row=start)
    return nodes, steps


def load_ensemble(path):
    """Parses an ensemble from the versioned text format."""
    try:
        with open(path, encoding="utf-8") as handle:
            lines = handle.read().splitlines()
    except FileNotFoundError:
        raise ParseError(f"file not found: {path}", path=path)
    if not lines or lines[0] != ENSEMBLE_FORMAT:
        raise ParseError(f"not a {ENSEMBLE_FORMAT} file", path=path, row=1)

    try:
        header = dict(line.split(" ", 1) if " " in line else (line, "") for line in lines[1:7])
        config = BoostConfig(**json.loads(header["config"]))
        n_features = int(header["n_features"])
        stages, cursor = [], 7
        for _ in range(int(header["rounds"])):
            _, rate, count = lines[cursor].split()
            nodes, steps = _read_tree(lines, cursor + 1, int(count), path)
            tree = RegressionTree(nodes=tuple(nodes), n_features=n_features)
            stages.append(BoostedStage(tree=tree, learning_rate=float(rate), steps=steps))
            cursor += 1 + int(count)
        return BoostedEnsemble(
            f0=float(header["f0"]),
            stages=tuple(stages),
            objective=Objective(header["objective"]),
            n_features=n_features,
            config=config,
            history=tuple(float(value) for value in header["history"].split()),
        )
    except (KeyError, IndexError, ValueError) as e:
        raise ParseError(f"malformed ensemble file: {e}", path=path)
