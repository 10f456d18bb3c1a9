"""Shared-weight feed-forward network for team embeddings.

One parameter set is evaluated on every branch (home/away for contrastive
training, anchor/positive/negative for triplet training). The branch inputs
are stacked into a single batch, so one backward pass already sums the
gradient contributions of all branches.
"""
import json
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from season_ranker.data.ingest import TrainingPair, TrainingTriplet
from season_ranker.utils.errors import DataValidationError, TrainingAbortedError
from season_ranker.utils.logging_config import logger
from season_ranker.utils.utils import make_rng

PARAMS_FORMAT = "season-ranker-siamese/1"


class LossKind(str, Enum):
    CONTRASTIVE = "contrastive"
    TRIPLET = "triplet"


class EmbeddingTap(str, Enum):
    FINAL_SCALAR = "final_scalar"
    PENULTIMATE = "penultimate_20"


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    loss: LossKind = LossKind.TRIPLET
    margin: float = Field(1.0, gt=0)
    epochs: int = Field(13, ge=1)
    rng_seed: int = 0
    embedding_tap: EmbeddingTap = EmbeddingTap.PENULTIMATE
    learning_rate: float = Field(0.001, ge=0)
    rho: float = Field(0.9, ge=0, lt=1)
    epsilon: float = Field(1e-7, gt=0)
    hidden_sizes: Tuple[int, ...] = (70, 20)
    # None trains on the full batch once per epoch
    batch_size: Optional[int] = Field(32, ge=1)
    # None takes the width from the data; a set value must match it
    input_width: Optional[int] = Field(None, ge=1)


@dataclass(frozen=True)
class SiameseParams:
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    seed: Optional[int] = None
    loss_history: Tuple[float, ...] = ()

    def __post_init__(self):
        for array in self.weights + self.biases:
            array.setflags(write=False)

    @property
    def input_width(self):
        return self.weights[0].shape[0]

    @property
    def layer_sizes(self):
        return (self.input_width,) + tuple(w.shape[1] for w in self.weights)

    def arrays(self):
        return self.weights + self.biases


@dataclass(frozen=True)
class Gradients:
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    def arrays(self):
        return self.weights + self.biases


@dataclass(frozen=True)
class RmsPropState:
    accumulators: Tuple[np.ndarray, ...]
    learning_rate: float = 0.001
    rho: float = 0.9
    epsilon: float = 1e-7
    momentum: float = 0.0

    @classmethod
    def fresh(cls, params, learning_rate=0.001, rho=0.9, epsilon=1e-7):
        return cls(
            accumulators=tuple(np.zeros_like(array) for array in params.arrays()),
            learning_rate=learning_rate,
            rho=rho,
            epsilon=epsilon,
        )


class GameScore(BaseModel):
    model_config = ConfigDict(frozen=True)

    game_index: int
    score: float
    # ties (score == 0) go to the home team
    predicted_home_win: bool


@dataclass(frozen=True)
class PairBatch:
    home: np.ndarray
    away: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return self.labels.size

    def take(self, index):
        return PairBatch(self.home[index], self.away[index], self.labels[index])


@dataclass(frozen=True)
class TripletBatch:
    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray

    def __len__(self):
        return self.anchor.shape[0]

    def take(self, index):
        return TripletBatch(self.anchor[index], self.positive[index], self.negative[index])


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------


def init_params(input_width, hidden_sizes=(70, 20), seed=0):
    """Uniform init in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    rng = make_rng(seed, "siamese-init")
    sizes = (input_width,) + tuple(hidden_sizes) + (1,)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return SiameseParams(weights=tuple(weights), biases=tuple(biases), seed=seed)


def forward(params, x):
    """Runs the network on one vector or a row batch.

    Returns (activations, output): the input followed by every rectified
    hidden layer, and the linear output (a float for a single vector).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.shape[1] != params.input_width:
        raise DataValidationError(f"input has {batch.shape[1]} features, network expects {params.input_width}")

    activations = [batch]
    hidden = batch
    for weight, bias in zip(params.weights[:-1], params.biases[:-1]):
        hidden = np.maximum(hidden @ weight + bias, 0.0)
        activations.append(hidden)
    output = (hidden @ params.weights[-1] + params.biases[-1])[:, 0]

    if single:
        return [a[0] for a in activations], float(output[0])
    return activations, output


def backward(params, activations, d_output):
    """Gradients of sum(d_output * output) through the network.

    The rectifier's subgradient at 0 is 0.
    """
    delta = np.asarray(d_output, dtype=float)[:, None]
    d_weights, d_biases = [], []
    for layer in range(len(params.weights) - 1, -1, -1):
        d_weights.append(activations[layer].T @ delta)
        d_biases.append(delta.sum(axis=0))
        if layer:
            delta = (delta @ params.weights[layer].T) * (activations[layer] > 0.0)
    return Gradients(weights=tuple(reversed(d_weights)), biases=tuple(reversed(d_biases)))


def euclidean_distance(a, b):
    """Euclidean distance between two equal-shape vectors."""
    a, b = np.atleast_1d(np.asarray(a, dtype=float)), np.atleast_1d(np.asarray(b, dtype=float))
    if a.shape != b.shape:
        raise DataValidationError(f"cannot compare vectors of shapes {a.shape} and {b.shape}")
    return float(np.sqrt(np.sum((b - a) ** 2)))


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def contrastive_loss(Y, D, m):
    """(1-Y) * D^2/2 + Y * max(0, m-D)^2/2, with Y=0 a home win."""
    if D < 0:
        raise DataValidationError(f"distance must be non-negative, got {D}")
    return (1 - Y) * 0.5 * D**2 + Y * 0.5 * max(0.0, m - D) ** 2


def triplet_loss(D_ap, D_an, m):
    """Hinge on anchor-positive minus anchor-negative distance plus the margin."""
    if D_ap < 0 or D_an < 0:
        raise DataValidationError(f"distances must be non-negative, got {D_ap}, {D_an}")
    return max(D_ap - D_an + m, 0.0)


def stack_batch(examples):
    """Stacks TrainingPairs or TrainingTriplets into arrays."""
    if isinstance(examples, (PairBatch, TripletBatch)):
        return examples
    examples = list(examples)
    if not examples:
        raise DataValidationError("empty training batch")
    if all(isinstance(e, TrainingPair) for e in examples):
        return PairBatch(
            home=np.array([e.home for e in examples], dtype=float),
            away=np.array([e.away for e in examples], dtype=float),
            labels=np.array([e.label for e in examples], dtype=float),
        )
    if all(isinstance(e, TrainingTriplet) for e in examples):
        return TripletBatch(
            anchor=np.array([e.anchor for e in examples], dtype=float),
            positive=np.array([e.positive for e in examples], dtype=float),
            negative=np.array([e.negative for e in examples], dtype=float),
        )
    raise DataValidationError("a batch must be all pairs or all triplets")


def loss_and_gradients(params, batch, margin):
    """Mean batch loss and its gradient; branch contributions add up."""
    batch = stack_batch(batch)
    n = len(batch)
    if not n:
        raise DataValidationError("empty training batch")

    if isinstance(batch, PairBatch):
        activations, output = forward(params, np.vstack([batch.home, batch.away]))
        u = output[:n] - output[n:]
        distance = np.abs(u)
        y = batch.labels
        hinge = np.maximum(0.0, margin - distance)
        losses = (1.0 - y) * 0.5 * distance**2 + y * 0.5 * hinge**2
        d_u = ((1.0 - y) * distance - y * hinge) * np.sign(u)
        d_output = np.concatenate([d_u, -d_u]) / n
    else:
        activations, output = forward(params, np.vstack([batch.anchor, batch.positive, batch.negative]))
        f_a, f_p, f_n = output[:n], output[n : 2 * n], output[2 * n :]
        u_ap, u_an = f_a - f_p, f_a - f_n
        slack = np.abs(u_ap) - np.abs(u_an) + margin
        active = (slack > 0.0).astype(float)
        losses = np.maximum(slack, 0.0)
        s_ap, s_an = active * np.sign(u_ap), active * np.sign(u_an)
        d_output = np.concatenate([s_ap - s_an, -s_ap, s_an]) / n

    return float(losses.mean()), backward(params, activations, d_output)


def loss_gradients(params, batch, config):
    """Gradient of the mean batch loss, mirroring the parameter structure."""
    return loss_and_gradients(params, batch, config.margin)[1]


def batch_loss(params, batch, margin):
    return loss_and_gradients(params, batch, margin)[0]


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


def rmsprop_step(params, grads, state):
    """acc <- rho*acc + (1-rho)*g^2;  theta <- theta - lr*g / (sqrt(acc) + eps)."""
    arrays, gradients = params.arrays(), grads.arrays()
    if len(arrays) != len(gradients) or any(a.shape != g.shape for a, g in zip(arrays, gradients)):
        raise DataValidationError("gradient shapes do not match the parameters")
    if not all(np.all(np.isfinite(g)) for g in gradients):
        raise TrainingAbortedError("non-finite gradient, training aborted")

    accumulators, updated = [], []
    for theta, g, acc in zip(arrays, gradients, state.accumulators):
        acc = state.rho * acc + (1.0 - state.rho) * g * g
        accumulators.append(acc)
        updated.append(theta - state.learning_rate * g / (np.sqrt(acc) + state.epsilon))

    layers = len(params.weights)
    new_params = replace(params, weights=tuple(updated[:layers]), biases=tuple(updated[layers:]))
    return new_params, replace(state, accumulators=tuple(accumulators))


# ---------------------------------------------------------------------------
# Training and scoring
# ---------------------------------------------------------------------------


def train(train_data, config):
    """Trains for exactly ``config.epochs`` passes; deterministic given the seed."""
    batch = stack_batch(train_data)
    expected = PairBatch if config.loss is LossKind.CONTRASTIVE else TripletBatch
    if not isinstance(batch, expected):
        raise DataValidationError(f"{config.loss.value} loss needs {expected.__name__.replace('Batch', '').lower()}s")

    width = (batch.home if isinstance(batch, PairBatch) else batch.anchor).shape[1]
    if config.input_width is not None and config.input_width != width:
        raise DataValidationError(f"configured input width {config.input_width} but the data has {width} features")

    params = init_params(width, config.hidden_sizes, config.rng_seed)
    state = RmsPropState.fresh(params, config.learning_rate, config.rho, config.epsilon)
    rng = make_rng(config.rng_seed, "siamese-batches")
    size = config.batch_size or len(batch)
    losses = []

    logger.info(
        f"📌 Training {config.loss.value} Siamese network {params.layer_sizes} on {len(batch)} examples "
        f"for {config.epochs} epochs"
    )
    for epoch in range(1, config.epochs + 1):
        order = np.arange(len(batch)) if config.batch_size is None else rng.permutation(len(batch))
        total = 0.0
        for start in range(0, len(batch), size):
            chunk = batch.take(order[start : start + size])
            loss, grads = loss_and_gradients(params, chunk, config.margin)
            params, state = rmsprop_step(params, grads, state)
            total += loss * len(chunk)
        losses.append(total / len(batch))
        logger.info(f"👉 {epoch},{losses[-1]:.10g}")

    logger.info(f"✅ Siamese training done, loss {losses[0]:.6g} -> {losses[-1]:.6g}")
    return replace(params, seed=config.rng_seed, loss_history=tuple(losses))


def _tap_outputs(params, rows):
    activations, output = forward(params, np.atleast_2d(np.asarray(rows, dtype=float)))
    return activations[-1], output


def score_game(params, home, away, tap=EmbeddingTap.FINAL_SCALAR, game_index=0):
    """Antisymmetric game score, positive when the home team is preferred.

    final_scalar: f(home) - f(away). penultimate_20: the Euclidean distance
    between the two hidden embeddings, signed by the scalar difference.
    """
    return score_games(params, [home], [away], tap, [game_index])[0]


def score_games(params, home_rows, away_rows, tap=EmbeddingTap.FINAL_SCALAR, game_indices=None):
    tap = EmbeddingTap(tap)
    home_embed, home_out = _tap_outputs(params, home_rows)
    away_embed, away_out = _tap_outputs(params, away_rows)
    scores = home_out - away_out
    if tap is EmbeddingTap.PENULTIMATE:
        scores = np.sign(scores) * np.sqrt(np.sum((home_embed - away_embed) ** 2, axis=1))

    game_indices = range(len(scores)) if game_indices is None else game_indices
    return [
        GameScore(game_index=int(index), score=float(score), predicted_home_win=bool(score >= 0.0))
        for index, score in zip(game_indices, scores)
    ]


def embed_teams(params, stats, tap=EmbeddingTap.PENULTIMATE):
    """team_id -> embedding (last hidden layer, or the 1-d output)."""
    stats = list(stats)
    teams = [record.team_id for record in stats]
    if len(set(teams)) != len(teams):
        raise DataValidationError("embed_teams takes one season's statistics, team ids repeat")
    if not stats:
        return {}
    hidden, output = _tap_outputs(params, [record.features for record in stats])
    vectors = hidden if EmbeddingTap(tap) is EmbeddingTap.PENULTIMATE else output[:, None]
    return {team: vectors[i].copy() for i, team in enumerate(teams)}


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_params(path, params, config):
    """Writes a versioned .npz: a JSON header plus one array per layer."""
    header = {
        "format": PARAMS_FORMAT,
        "layer_sizes": list(params.layer_sizes),
        "seed": params.seed,
        "config": config.model_dump(mode="json"),
        "loss_history": list(params.loss_history),
    }
    arrays = {f"weight_{i}": w for i, w in enumerate(params.weights)}
    arrays.update({f"bias_{i}": b for i, b in enumerate(params.biases)})
    with open(path, "wb") as file:
        np.savez(file, header=np.array(json.dumps(header, sort_keys=True)), **arrays)
    logger.info(f"✅ Saved Siamese parameters {params.layer_sizes} to {path}")
    return path


def load_params(path):
    """Reads parameters written by save_params, checking the format header."""
    with np.load(path, allow_pickle=False) as archive:
        header = json.loads(str(archive["header"]))
        if header.get("format") != PARAMS_FORMAT:
            raise DataValidationError(f"{path}: unsupported parameter format {header.get('format')!r}")
        layers = len(header["layer_sizes"]) - 1
        params = SiameseParams(
            weights=tuple(archive[f"weight_{i}"].copy() for i in range(layers)),
            biases=tuple(archive[f"bias_{i}"].copy() for i in range(layers)),
            seed=header["seed"],
            loss_history=tuple(header["loss_history"]),
        )
    return params, TrainConfig.model_validate(header["config"])


def write_training_log(path, params):
    """Writes the per-epoch mean loss as CSV."""
    with open(path, "w", encoding="utf-8") as file:
        file.write("epoch,mean_loss\n")
        for epoch, loss in enumerate(params.loss_history, start=1):
            file.write(f"{epoch},{loss!r}\n")
    return path
