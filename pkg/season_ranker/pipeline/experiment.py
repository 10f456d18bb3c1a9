"""Experiment orchestration: configuration, model fitting, tuning and the full run."""
import itertools
import json
import os
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from season_ranker.data.ingest import (
    NormalizationParams,
    Sport,
    build_pairs,
    build_triplets,
    cv_folds,
    fit_normalization,
    load_league,
    normalize_season,
    temporal_split,
)
from season_ranker.models.gbm import (
    BoostConfig,
    BoostedEnsemble,
    QueryGroup,
    boost_fit,
    load_ensemble,
    predict,
    save_ensemble,
)
from season_ranker.models.objectives import Objective
from season_ranker.models.siamese import (
    EmbeddingTap,
    GameScore,
    LossKind,
    SiameseParams,
    TrainConfig,
    embed_teams,
    load_params,
    save_params,
    score_games,
    train,
)
from season_ranker.pipeline.report import MetricRow, Report, ReportFormat, reference_checks
from season_ranker.ranking.metrics import evaluate_standings
from season_ranker.ranking.ranker import (
    BaselineKind,
    naive_baseline,
    randomized_baseline,
    standings_from_order,
    standings_from_results,
    standings_from_tally,
    tally_rank,
)
from season_ranker.utils.errors import DataValidationError, StageError
from season_ranker.utils.logging_config import logger
from season_ranker.utils.utils import derive_seed, load_config


class ModelKey(str, Enum):
    GBM_NDCG = "gbm_ndcg"
    GBM_PAIRWISE = "gbm_pairwise"
    GBM_NDCG_CONTRASTIVE = "gbm_ndcg+siamese_contrastive"
    GBM_NDCG_TRIPLET = "gbm_ndcg+siamese_triplet"
    GBM_PAIRWISE_CONTRASTIVE = "gbm_pairwise+siamese_contrastive"
    GBM_PAIRWISE_TRIPLET = "gbm_pairwise+siamese_triplet"
    SIAMESE_CONTRASTIVE = "siamese_contrastive"
    SIAMESE_TRIPLET = "siamese_triplet"

    @property
    def objective(self):
        """Boosting objective, None for score-only Siamese models."""
        if self.value.startswith("gbm_ndcg"):
            return Objective.NDCG_SCALED_PAIRWISE
        if self.value.startswith("gbm_pairwise"):
            return Objective.PAIRWISE_LOGISTIC
        return None

    @property
    def siamese_loss(self):
        if self.value.endswith("siamese_contrastive"):
            return LossKind.CONTRASTIVE
        if self.value.endswith("siamese_triplet"):
            return LossKind.TRIPLET
        return None


SIX_MODELS = (
    ModelKey.GBM_NDCG,
    ModelKey.GBM_PAIRWISE,
    ModelKey.GBM_NDCG_CONTRASTIVE,
    ModelKey.GBM_NDCG_TRIPLET,
    ModelKey.GBM_PAIRWISE_CONTRASTIVE,
    ModelKey.GBM_PAIRWISE_TRIPLET,
)


class LeagueOptions(BaseModel):
    model_config = ConfigDict(frozen=True)

    metric_cutoff_k: int = Field(15, ge=1)
    playoff_cutoff: int = Field(8, ge=1)
    conference_size: int = Field(15, ge=1)


class TuneGrid(BaseModel):
    model_config = ConfigDict(frozen=True)

    margin: Tuple[float, ...] = (0.5, 1.0, 2.0)
    max_depth: Tuple[int, ...] = (2, 3)
    learning_rate: Tuple[float, ...] = (0.05, 0.1)
    rounds: Tuple[int, ...] = (50, 100)

    def points(self):
        """Grid points in product order (margin varies slowest)."""
        names = ("margin", "max_depth", "learning_rate", "rounds")
        return [dict(zip(names, values)) for values in itertools.product(*(getattr(self, n) for n in names))]


class ReportConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    formats: Tuple[ReportFormat, ...] = (ReportFormat.TEXT, ReportFormat.CSV, ReportFormat.JSON)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    sport: Sport = Sport.BASKETBALL
    data_dir: str = "data"
    output_dir: str = "output"
    conferences_path: Optional[str] = None
    models: Tuple[ModelKey, ...] = SIX_MODELS
    rng_seed: int = 7
    repeats: int = Field(1, ge=1)
    tune: bool = False
    tune_model: ModelKey = ModelKey.GBM_NDCG_TRIPLET
    ndcg_scope: str = Field("conference", pattern="^(conference|league)$")
    baseline_trials: int = Field(30, ge=1)
    use_actual_winners: bool = False
    league: LeagueOptions = LeagueOptions()
    siamese: TrainConfig = TrainConfig()
    gbm: BoostConfig = BoostConfig()
    tune_grid: TuneGrid = TuneGrid()
    report: ReportConfig = ReportConfig()
    # published metric values per sport and model, checked when the league is read from data_dir
    reference_targets: Dict[Sport, Dict[ModelKey, Dict[Literal["ap", "spearman", "ndcg"], float]]] = {}
    reference_tolerance: float = Field(0.05, ge=0)

    @classmethod
    def from_yaml(cls, path=None, **overrides):
        """Defaults from config.yaml, the user's file merged over them, then explicit overrides."""
        values = load_config(path)
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls.model_validate(values)

    def with_grid_point(self, point):
        siamese = self.siamese.model_copy(update={"margin": point["margin"]})
        gbm = self.gbm.model_copy(
            update={key: point[key] for key in ("max_depth", "learning_rate", "rounds")}
        )
        return self.model_copy(update={"siamese": siamese, "gbm": gbm})


@dataclass(frozen=True)
class FittedModel:
    """Everything needed to score a new season with one trained model."""

    model: ModelKey
    normalization: NormalizationParams
    tap: EmbeddingTap
    siamese: Optional[SiameseParams] = None
    siamese_config: Optional[TrainConfig] = None
    ensemble: Optional[BoostedEnsemble] = None
    # raw GBM score that splits training games at the training home-win rate
    threshold: float = 0.0
    # +1 or -1 so that home wins score higher on training games
    orientation: float = 1.0


@dataclass(frozen=True)
class TuneResult:
    config: ExperimentConfig
    point: dict
    scores: List[Tuple[dict, float]] = field(default_factory=list)


@contextmanager
def stage(name):
    logger.info(f"📌 [{name}] started")
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        logger.error(f"❌ [{name}] failed: {e}")
        raise StageError(name, e) from e
    logger.info(f"✅ [{name}] finished")


# ---------------------------------------------------------------------------
# Fitting and scoring one model
# ---------------------------------------------------------------------------


def actual_standings(dataset):
    """Standings file order when supplied, otherwise derived from the results."""
    if dataset.actual_order is not None:
        return standings_from_order(dataset.actual_order, tag=f"actual-{dataset.season_id}")
    return standings_from_results(dataset.games, teams=dataset.team_ids, tag=f"actual-{dataset.season_id}")


def game_rows(dataset, siamese=None, tap=EmbeddingTap.PENULTIMATE):
    """Per-game rows concat(home, away, |home - away|) of features or embeddings."""
    vectors = embed_teams(siamese, dataset.stats, tap) if siamese is not None else dataset.stats_by_team()
    home = np.array([vectors[game.home_team] for game in dataset.games], dtype=float)
    away = np.array([vectors[game.away_team] for game in dataset.games], dtype=float)
    return np.hstack([home, away, np.abs(home - away)])


def _team_rows(dataset):
    vectors = dataset.stats_by_team()
    home = np.array([vectors[game.home_team] for game in dataset.games], dtype=float)
    away = np.array([vectors[game.away_team] for game in dataset.games], dtype=float)
    return home, away


def _home_won(dataset):
    return np.array([game.home_won for game in dataset.games], dtype=float)


def fit_model(model, train_seasons, config, seed):
    """Fits normalization, the optional Siamese network and the optional GBM on the training seasons."""
    model = ModelKey(model)
    train_seasons = list(train_seasons)
    if not train_seasons:
        raise DataValidationError("fit_model needs at least one training season")

    normalization = fit_normalization([record for season in train_seasons for record in season.stats])
    seasons = [normalize_season(season, normalization) for season in train_seasons]
    tap = config.siamese.embedding_tap

    siamese, siamese_config = None, None
    if model.siamese_loss is not None:
        siamese_config = config.siamese.model_copy(
            update={"loss": model.siamese_loss, "rng_seed": derive_seed(seed, model.value, "siamese")}
        )
        if model.siamese_loss is LossKind.CONTRASTIVE:
            examples = [pair for season in seasons for pair in build_pairs(season)]
        else:
            examples = [t for season in seasons for t in build_triplets(season, siamese_config.rng_seed)]
        siamese = train(examples, siamese_config)

    if model.objective is None:
        home, away = zip(*(_team_rows(season) for season in seasons))
        scores = np.array([s.score for s in score_games(siamese, np.vstack(home), np.vstack(away), tap)])
        won = np.concatenate([_home_won(season) for season in seasons]).astype(bool)
        orientation = 1.0
        if won.any() and (~won).any() and scores[won].mean() < scores[~won].mean():
            orientation = -1.0
        return FittedModel(model, normalization, tap, siamese, siamese_config, orientation=orientation)

    groups = [
        QueryGroup(key=str(season.season_id), rows=game_rows(season, siamese, tap), labels=_home_won(season))
        for season in seasons
    ]
    boost_config = config.gbm.model_copy(
        update={"objective": model.objective, "rng_seed": derive_seed(seed, model.value, "gbm")}
    )
    ensemble = boost_fit(groups, config=boost_config)

    raw = predict(ensemble, np.vstack([group.rows for group in groups]))
    home_rate = float(np.mean(np.concatenate([group.labels for group in groups])))
    threshold = float(np.quantile(raw, 1.0 - home_rate))
    return FittedModel(model, normalization, tap, siamese, siamese_config, ensemble, threshold=threshold)


def score_season(fitted, target):
    """Per-game scores for the target season, positive when the home team is predicted to win."""
    season = normalize_season(target, fitted.normalization)
    indices = [game.game_index for game in season.games]
    if fitted.ensemble is None:
        home, away = _team_rows(season)
        return [
            GameScore(
                game_index=s.game_index,
                score=fitted.orientation * s.score,
                predicted_home_win=fitted.orientation * s.score >= 0.0,
            )
            for s in score_games(fitted.siamese, home, away, fitted.tap, indices)
        ]

    raw = predict(fitted.ensemble, game_rows(season, fitted.siamese, fitted.tap))
    centred = raw - fitted.threshold
    return [
        GameScore(game_index=index, score=float(score), predicted_home_win=bool(score >= 0.0))
        for index, score in zip(indices, centred)
    ]


def rank_season(fitted, target, use_actual_winners=False):
    scores = score_season(fitted, target)
    board = tally_rank(target.games, scores, teams=target.team_ids, use_actual=use_actual_winners)
    spread = sum(abs(value) for value in board.tallies.values())
    if abs(board.total()) > 1e-9 * max(1.0, spread):
        logger.warning(f"⚠️ Tallies of {fitted.model.value} sum to {board.total():.3e}, expected 0")
    return scores, standings_from_tally(board, tag=fitted.model.value)


def fit_and_predict(model, train_seasons, target_season, config, seed):
    """Fits on ``train_seasons`` and returns (game scores, predicted standings) for the target."""
    fitted = fit_model(model, train_seasons, config, seed)
    return rank_season(fitted, target_season, config.use_actual_winners)


# ---------------------------------------------------------------------------
# Model artifacts
# ---------------------------------------------------------------------------


def save_fitted_model(fitted, directory):
    os.makedirs(directory, exist_ok=True)
    meta = {
        "model": fitted.model.value,
        "tap": fitted.tap.value,
        "threshold": fitted.threshold,
        "orientation": fitted.orientation,
        "normalization": fitted.normalization.model_dump(mode="json"),
    }
    with open(os.path.join(directory, "model.json"), "w", encoding="utf-8") as file:
        json.dump(meta, file, sort_keys=True, indent=2)
    if fitted.siamese is not None:
        save_params(os.path.join(directory, "siamese.npz"), fitted.siamese, fitted.siamese_config)
    if fitted.ensemble is not None:
        save_ensemble(os.path.join(directory, "ensemble.txt"), fitted.ensemble)
    logger.info(f"✅ Saved {fitted.model.value} to {directory}")
    return directory


def load_fitted_model(directory):
    meta_path = os.path.join(directory, "model.json")
    if not os.path.exists(meta_path):
        raise DataValidationError(f"no trained model in {directory}", path=meta_path)
    with open(meta_path, encoding="utf-8") as file:
        meta = json.load(file)

    model = ModelKey(meta["model"])
    siamese, siamese_config, ensemble = None, None, None
    if model.siamese_loss is not None:
        siamese, siamese_config = load_params(os.path.join(directory, "siamese.npz"))
    if model.objective is not None:
        ensemble = load_ensemble(os.path.join(directory, "ensemble.txt"))
    return FittedModel(
        model=model,
        normalization=NormalizationParams.model_validate(meta["normalization"]),
        tap=EmbeddingTap(meta["tap"]),
        siamese=siamese,
        siamese_config=siamese_config,
        ensemble=ensemble,
        threshold=float(meta["threshold"]),
        orientation=float(meta["orientation"]),
    )


# ---------------------------------------------------------------------------
# Tuning
# ---------------------------------------------------------------------------


def _fold_ndcg(model, seed):
    def evaluate(candidate, fit_seasons, held_out):
        _, predicted = fit_and_predict(model, fit_seasons, held_out, candidate, seed)
        return evaluate_standings(predicted, actual_standings(held_out), held_out.league, candidate.ndcg_scope).ndcg

    return evaluate


def tune_hyperparameters(train_seasons, grid, seed, config=None, model=None, evaluate=None):
    """Grid search on the three rotating folds; the best mean validation NDCG wins.

    ``evaluate(candidate_config, fit_seasons, held_out_season) -> score`` can
    replace the default fit-and-rank NDCG. Ties keep the earlier grid point.
    """
    config = config or ExperimentConfig()
    model = ModelKey(model or config.tune_model)
    folds = cv_folds(train_seasons)
    points = grid.points()
    if not points:
        raise DataValidationError("hyperparameter grid is empty")
    evaluate = evaluate or _fold_ndcg(model, seed)

    best, best_score, scores = None, -np.inf, []
    for point in points:
        candidate = config.with_grid_point(point)
        score = float(np.mean([evaluate(candidate, fit_seasons, held_out) for fit_seasons, held_out in folds]))
        scores.append((point, score))
        logger.info(f"👉 Grid point {point}: mean validation NDCG {score:.4f}")
        if score > best_score:
            best, best_score = point, score

    logger.info(f"✅ Chose {best} (mean validation NDCG {best_score:.4f}) for {model.value}")
    return TuneResult(config=config.with_grid_point(best), point=best, scores=scores)


# ---------------------------------------------------------------------------
# Full experiment
# ---------------------------------------------------------------------------


def load_seasons(config):
    return load_league(
        config.data_dir,
        config.sport,
        conferences_path=config.conferences_path,
        **config.league.model_dump(),
    )


def run_experiment(config, seasons=None):
    """Trains on the first three seasons, predicts the fourth and scores every model and baseline.

    Leagues read from ``config.data_dir`` are also checked against ``config.reference_targets``.
    """
    from_data_dir = seasons is None
    if from_data_dir:
        with stage("ingest"):
            seasons = load_seasons(config)
    with stage("split"):
        train_seasons, test = temporal_split(seasons)

    if config.tune:
        with stage("tune"):
            config = tune_hyperparameters(train_seasons, config.tune_grid, config.rng_seed, config).config

    actual = actual_standings(test)
    rows, standings = [], {}
    for model in config.models:
        evaluations = []
        for repeat in range(config.repeats):
            with stage(f"{model.value}#{repeat}"):
                _, predicted = fit_and_predict(model, train_seasons, test, config, config.rng_seed + repeat)
                evaluations.append(evaluate_standings(predicted, actual, test.league, config.ndcg_scope))
            if repeat == 0:
                standings[model.value] = predicted
        rows.append(MetricRow.from_evaluations(model.value, evaluations))

    with stage(BaselineKind.NAIVE.value):
        previous = actual_standings(train_seasons[-1])
        naive = naive_baseline(previous, teams=test.team_ids)
        rows.append(
            MetricRow.from_evaluations(
                BaselineKind.NAIVE.value,
                [evaluate_standings(naive, actual, test.league, config.ndcg_scope)],
                kind="baseline",
            )
        )
        standings[BaselineKind.NAIVE.value] = naive

    with stage(BaselineKind.RANDOMIZED.value):
        trials = randomized_baseline(test.team_ids, config.baseline_trials, config.rng_seed)
        rows.append(
            MetricRow.from_evaluations(
                BaselineKind.RANDOMIZED.value,
                [evaluate_standings(trial, actual, test.league, config.ndcg_scope) for trial in trials],
                kind="baseline",
            )
        )

    standings["actual"] = actual
    reference = ()
    if from_data_dir:
        targets = {model.value: metrics for model, metrics in config.reference_targets.get(config.sport, {}).items()}
        reference = reference_checks(rows, targets, config.reference_tolerance)
        for check in reference:
            if not check.agrees:
                logger.warning(
                    f"⚠️ {check.model} {check.metric} {check.measured:.3f} is outside "
                    f"{check.target:.3f} ±{check.tolerance:g}"
                )
    return Report(
        sport=config.sport,
        train_seasons=tuple(season.season_id for season in train_seasons),
        test_season=test.season_id,
        rows=tuple(rows),
        standings=standings,
        conferences={team: conference.value for team, conference in test.league.conferences.items()},
        reference=reference,
    )
