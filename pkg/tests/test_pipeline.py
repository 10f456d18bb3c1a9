import json
import os

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError
from scipy.optimize import minimize
from scipy.special import expit

from season_ranker.data.ingest import Sport, fit_normalization, normalize_season, temporal_split
from season_ranker.data.synthetic import SyntheticLeagueSpec, generate_synthetic_league, write_synthetic_league
from season_ranker.models.siamese import GameScore
from season_ranker.pipeline.experiment import (
    SIX_MODELS,
    ExperimentConfig,
    ModelKey,
    TuneGrid,
    actual_standings,
    fit_and_predict,
    fit_model,
    game_rows,
    load_fitted_model,
    rank_season,
    run_experiment,
    save_fitted_model,
    score_season,
    stage,
    tune_hyperparameters,
)
from season_ranker.pipeline.report import (
    MetricRow,
    Report,
    ReportFormat,
    emit_report,
    format_metric,
    read_report_json,
    reference_checks,
    render_text,
    write_standings_files,
)
from season_ranker.ranking.metrics import Evaluation, assign_relevance, evaluate_standings, ndcg, spearman_rs
from season_ranker.ranking.ranker import naive_baseline, standings_from_order, standings_from_tally, tally_rank
from season_ranker.utils.errors import DataValidationError, SeasonRankerError, StageError


def quick_config(tmp_path, **overrides):
    values = {
        "sport": "rugby",
        "output_dir": str(tmp_path / "out"),
        "models": ["gbm_ndcg", "siamese_triplet"],
        "gbm": {"rounds": 5},
        "siamese": {"epochs": 3},
        "baseline_trials": 5,
    }
    values.update(overrides)
    return ExperimentConfig.from_yaml(**values)


class TestConfig:
    def test_defaults(self):
        config = ExperimentConfig.from_yaml()
        assert config.models == SIX_MODELS
        assert config.tune_model is ModelKey.GBM_NDCG_TRIPLET
        assert config.siamese.epochs == 13
        assert config.siamese.hidden_sizes == (70, 20)
        assert config.gbm.rounds == 100
        assert config.league.metric_cutoff_k == 15
        assert config.reference_targets[Sport.RUGBY][ModelKey.GBM_PAIRWISE_TRIPLET] == {
            "ap": 0.921,
            "spearman": 0.793,
            "ndcg": 0.982,
        }
        assert config.siamese.batch_size == 32

    def test_user_file_is_merged(self, tmp_path):
        path = tmp_path / "config.yaml"
        path.write_text("sport: rugby\ngbm:\n  rounds: 7\n", encoding="utf-8")
        config = ExperimentConfig.from_yaml(str(path))
        assert config.sport.value == "rugby"
        assert config.gbm.rounds == 7
        assert config.gbm.max_depth == 3

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            ExperimentConfig.from_yaml(str(tmp_path / "absent.yaml"))

    def test_invalid_values(self):
        with pytest.raises(ValidationError):
            ExperimentConfig.from_yaml(ndcg_scope="division")
        with pytest.raises(ValidationError):
            ExperimentConfig.from_yaml(models=["gbm_magic"])

    def test_model_keys(self):
        assert ModelKey.GBM_PAIRWISE_CONTRASTIVE.objective.value == "pairwise_logistic"
        assert ModelKey.GBM_PAIRWISE_CONTRASTIVE.siamese_loss.value == "contrastive"
        assert ModelKey.GBM_NDCG.siamese_loss is None
        assert ModelKey.SIAMESE_TRIPLET.objective is None

    def test_grid_points(self):
        grid = TuneGrid(margin=(0.5, 1.0), max_depth=(2,), learning_rate=(0.1,), rounds=(10, 20))
        points = grid.points()
        assert len(points) == 4
        assert points[0] == {"margin": 0.5, "max_depth": 2, "learning_rate": 0.1, "rounds": 10}
        assert points[1]["rounds"] == 20 and points[2]["margin"] == 1.0


class TestStage:
    def test_wraps_validation_errors(self):
        with pytest.raises(StageError) as info:
            with stage("split"):
                raise DataValidationError("three seasons given")
        assert info.value.stage == "split"
        assert info.value.exit_code == 1
        assert info.value.to_dict()["stage"] == "split"

    def test_wraps_runtime_errors(self):
        with pytest.raises(StageError) as info:
            with stage("train"):
                raise KeyError("boom")
        assert info.value.stage == "train"
        assert isinstance(info.value.cause, KeyError)
        assert info.value.exit_code == 2
        assert info.value.to_dict()["error"] == "Stage Failure"

    def test_nested_stage_keeps_the_inner_name(self):
        with pytest.raises(StageError) as info:
            with stage("outer"):
                with stage("inner"):
                    raise ValueError("bad")
        assert info.value.stage == "inner"


class TestFitting:
    def test_game_rows(self, rugby_league):
        season = rugby_league.seasons[0]
        rows = game_rows(season)
        assert rows.shape == (len(season.games), 3 * len(season.feature_names))
        np.testing.assert_array_equal(rows[:, -len(season.feature_names) :], np.abs(rows[:, :37] - rows[:, 37:74]))

    def test_gbm_standings_cover_the_league(self, tmp_path, rugby_league):
        train_seasons, test = temporal_split(rugby_league.seasons)
        fitted = fit_model(ModelKey.GBM_PAIRWISE, train_seasons, quick_config(tmp_path), seed=1)
        scores, standings = rank_season(fitted, test)
        assert len(scores) == len(test.games)
        assert sorted(standings.team_ids) == sorted(test.team_ids)
        tallies = [entry.tally for entry in standings.entries]
        assert abs(sum(tallies)) < 1e-9

    def test_fit_and_predict_matches_the_two_steps(self, tmp_path, rugby_league):
        train_seasons, test = temporal_split(rugby_league.seasons)
        config = quick_config(tmp_path)
        scores, standings = fit_and_predict(ModelKey.GBM_NDCG, train_seasons, test, config, seed=4)
        expected_scores, expected = rank_season(fit_model(ModelKey.GBM_NDCG, train_seasons, config, seed=4), test)
        assert scores == expected_scores
        assert standings.team_ids == expected.team_ids

    def test_score_only_model(self, tmp_path, rugby_league):
        train_seasons, test = temporal_split(rugby_league.seasons)
        fitted = fit_model(ModelKey.SIAMESE_CONTRASTIVE, train_seasons, quick_config(tmp_path), seed=1)
        assert fitted.ensemble is None and fitted.orientation in (1.0, -1.0)
        _, standings = rank_season(fitted, test)
        assert len(standings) == len(test.team_ids)

    def test_saved_model_scores_the_same(self, tmp_path, rugby_league):
        train_seasons, test = temporal_split(rugby_league.seasons)
        fitted = fit_model(ModelKey.GBM_NDCG_CONTRASTIVE, train_seasons, quick_config(tmp_path), seed=2)
        loaded = load_fitted_model(save_fitted_model(fitted, str(tmp_path / "model")))
        assert score_season(loaded, test) == score_season(fitted, test)

    def test_missing_model_directory(self, tmp_path):
        with pytest.raises(DataValidationError):
            load_fitted_model(str(tmp_path / "nothing"))


class TestTuning:
    def folds(self, rugby_league):
        return rugby_league.seasons[:3]

    def test_planted_optimum(self, rugby_league):
        grid = TuneGrid(margin=(0.5, 1.0, 2.0), max_depth=(2, 3), learning_rate=(0.1,), rounds=(10,))

        def evaluate(candidate, fit_seasons, held_out):
            assert held_out.season_id not in [s.season_id for s in fit_seasons]
            return -abs(candidate.siamese.margin - 1.0) - abs(candidate.gbm.max_depth - 3)

        result = tune_hyperparameters(self.folds(rugby_league), grid, seed=0, evaluate=evaluate)
        assert result.point == {"margin": 1.0, "max_depth": 3, "learning_rate": 0.1, "rounds": 10}
        assert result.config.gbm.max_depth == 3 and result.config.siamese.margin == 1.0
        assert len(result.scores) == 6

    def test_ties_keep_the_first_point(self, rugby_league):
        grid = TuneGrid(margin=(2.0, 1.0), max_depth=(3,), learning_rate=(0.1,), rounds=(10,))
        result = tune_hyperparameters(self.folds(rugby_league), grid, seed=0, evaluate=lambda *_: 0.5)
        assert result.point["margin"] == 2.0

    def test_singleton_grid_with_real_folds(self, tmp_path, rugby_league):
        grid = TuneGrid(margin=(1.0,), max_depth=(2,), learning_rate=(0.1,), rounds=(3,))
        config = quick_config(tmp_path)
        result = tune_hyperparameters(self.folds(rugby_league), grid, 0, config, model=ModelKey.GBM_NDCG)
        assert result.point == grid.points()[0]
        assert 0.0 < result.scores[0][1] <= 1.0

    def test_empty_grid(self, rugby_league):
        with pytest.raises(DataValidationError):
            tune_hyperparameters(self.folds(rugby_league), TuneGrid(margin=()), seed=0, evaluate=lambda *_: 0.0)


class TestRunExperiment:
    @pytest.fixture(scope="class")
    def report(self, tmp_path_factory, rugby_league):
        config = quick_config(tmp_path_factory.mktemp("run"))
        return run_experiment(config, seasons=rugby_league.seasons)

    def test_rows(self, report):
        assert [row.name for row in report.rows] == [
            "gbm_ndcg",
            "siamese_triplet",
            "naive_previous_season",
            "randomized",
        ]
        randomized = report.row("randomized")
        assert randomized.runs == 5 and randomized.ap_std is not None
        assert report.row("gbm_ndcg").ap_std is None
        assert report.train_seasons == (2015, 2016, 2017) and report.test_season == 2018

    def test_naive_row_matches_last_season(self, report, rugby_league):
        train_seasons, test = temporal_split(rugby_league.seasons)
        naive = naive_baseline(actual_standings(train_seasons[-1]), teams=test.team_ids)
        expected = evaluate_standings(naive, actual_standings(test), test.league)
        assert report.row("naive_previous_season").ap == expected.ap
        assert report.standings["naive_previous_season"].team_ids == naive.team_ids

    def test_deterministic(self, tmp_path, report, rugby_league):
        again = run_experiment(quick_config(tmp_path), seasons=rugby_league.seasons)
        assert again.rows == report.rows

        emitted = []
        for run, result in (("first", report), ("second", again)):
            out_dir = str(tmp_path / run)
            paths = [emit_report(result, fmt, out_dir) for fmt in ReportFormat]
            paths += write_standings_files(result, out_dir)
            emitted.append({os.path.relpath(path, out_dir): open(path, "rb").read() for path in paths})
        assert emitted[0] == emitted[1]

    def test_league_from_data_dir_is_checked_against_references(self, tmp_path, rugby_league):
        write_synthetic_league(rugby_league, str(tmp_path / "data"))
        config = quick_config(
            tmp_path,
            data_dir=str(tmp_path / "data"),
            models=["gbm_pairwise+siamese_triplet"],
            league={"metric_cutoff_k": 6, "playoff_cutoff": 4, "conference_size": 6},
        )
        report = run_experiment(config)
        assert [check.metric for check in report.reference] == ["ap", "ndcg", "spearman"]
        assert {check.model for check in report.reference} == {"gbm_pairwise+siamese_triplet"}
        assert report.reference[0].target == 0.921
        assert run_experiment(config, seasons=rugby_league.seasons).reference == ()

    def test_metrics_in_range(self, report):
        for row in report.rows:
            assert 0.0 <= row.ap <= 1.0
            assert -1.0 <= row.spearman <= 1.0
            assert 0.0 < row.ndcg <= 1.0

    def test_too_few_seasons_fails_in_split(self, tmp_path, rugby_league):
        with pytest.raises(StageError) as info:
            run_experiment(quick_config(tmp_path), seasons=rugby_league.seasons[:3])
        assert info.value.stage == "split"

    def test_report_files(self, tmp_path, report):
        paths = {fmt: emit_report(report, fmt, str(tmp_path)) for fmt in ReportFormat}
        assert read_report_json(paths[ReportFormat.JSON]) == report

        frame = pd.read_csv(paths[ReportFormat.CSV])
        assert list(frame["model"]) == [row.name for row in report.rows]
        assert "AP" in frame.columns and "mAP" not in frame.columns
        assert frame["AP"].iloc[0] == pytest.approx(report.rows[0].ap, rel=1e-15)

        text = open(paths[ReportFormat.TEXT], encoding="utf-8").read()
        assert text == render_text(report)
        assert "Rugby results" in text and "±" in text

    def test_standings_files(self, tmp_path, report):
        written = write_standings_files(report, str(tmp_path))
        names = sorted(os.path.basename(path) for path in written)
        assert names == ["actual.csv", "gbm_ndcg.csv", "naive_previous_season.csv", "siamese_triplet.csv"]

    @pytest.mark.slow
    def test_six_models_on_a_basketball_league(self, tmp_path, basketball_league):
        config = quick_config(tmp_path, sport="basketball", models=[m.value for m in SIX_MODELS])
        report = run_experiment(config, seasons=basketball_league.seasons)
        assert len(report.rows) == 8
        assert report.ap_label == "mAP"
        written = write_standings_files(report, str(tmp_path))
        assert len(written) == 3 * 8
        payload = json.load(open(emit_report(report, "json", str(tmp_path)), encoding="utf-8"))
        assert set(payload["conferences"].values()) == {"East", "West"}


class TestReport:
    def basketball_report(self):
        return Report(
            sport="basketball",
            train_seasons=(2014, 2015, 2016),
            test_season=2017,
            rows=(MetricRow(name="m", ap=0.5, spearman=0.25, ndcg=0.9, playoff_hits=3, playoff_total=4),),
            standings={"m": standings_from_order(["W1", "E1", "E2", "W2"], tag="m")},
            conferences={"E1": "East", "E2": "East", "W1": "West", "W2": "West"},
        )

    def test_conference_standings_files(self, tmp_path):
        written = write_standings_files(self.basketball_report(), str(tmp_path))
        assert sorted(os.path.basename(path) for path in written) == ["m.csv", "m_East.csv", "m_West.csv"]
        west = pd.read_csv(tmp_path / "standings" / "m_West.csv")
        assert list(west["team"]) == ["W1", "W2"] and list(west["rank"]) == [1, 2]

    def test_table(self):
        text = render_text(self.basketball_report())
        assert "mAP" in text and "3/4" in text

    def test_playoffs_per_conference(self, tmp_path):
        row = MetricRow(
            name="m", ap=0.5, spearman=0.25, ndcg=0.9, playoff_hits=15, playoff_total=16,
            playoff_by_pool={"East": 8, "West": 7},
        )
        report = self.basketball_report().model_copy(update={"rows": (row,)})
        assert "E 8/8, W 7/8" in render_text(report)
        frame = pd.read_csv(emit_report(report, "csv", str(tmp_path)))
        assert frame.loc[0, "playoff_East"] == 8 and frame.loc[0, "playoff_West"] == 7
        loaded = read_report_json(emit_report(report, "json", str(tmp_path)))
        assert loaded.rows[0].playoff_by_pool == {"East": 8.0, "West": 7.0}

    def test_playoffs_per_conference_are_averaged(self):
        evaluations = [
            Evaluation(ap=0.5, spearman=0.0, ndcg=0.5, playoff_hits=3, playoff_total=4, playoff_by_pool={"East": 2, "West": 1}),
            Evaluation(ap=0.5, spearman=0.0, ndcg=0.5, playoff_hits=4, playoff_total=4, playoff_by_pool={"East": 2, "West": 2}),
        ]
        row = MetricRow.from_evaluations("randomized", evaluations, kind="baseline")
        assert row.playoff_by_pool == {"East": 2.0, "West": 1.5}
        report = self.basketball_report().model_copy(update={"rows": (row,)})
        assert "E 2/2, W 1.5/2" in render_text(report)

    def test_reference_agreement(self, tmp_path):
        rows = (MetricRow(name="gbm_ndcg+siamese_triplet", ap=0.85, spearman=0.8, ndcg=0.9),)
        targets = {"gbm_ndcg+siamese_triplet": {"ap": 0.867, "ndcg": 0.98}, "gbm_ndcg": {"ap": 0.822}}
        checks = reference_checks(rows, targets)
        assert [(check.metric, check.agrees) for check in checks] == [("ap", True), ("ndcg", False)]

        report = self.basketball_report().model_copy(update={"rows": rows, "reference": checks})
        text = render_text(report)
        assert "gbm_ndcg+siamese_triplet mAP 0.850 vs 0.867 (±0.05): agrees" in text
        assert "gbm_ndcg+siamese_triplet NDCG 0.900 vs 0.980 (±0.05): differs" in text
        assert read_report_json(emit_report(report, "json", str(tmp_path))).reference == checks

    def test_no_reference_section_without_checks(self):
        assert "Reference agreement" not in render_text(self.basketball_report())

    def test_unknown_reference_metric(self):
        rows = (MetricRow(name="m", ap=0.5, spearman=0.5, ndcg=0.5),)
        with pytest.raises(DataValidationError):
            reference_checks(rows, {"m": {"f1": 0.5}})

    def test_format_metric(self):
        assert format_metric(0.12345) == "0.123"
        assert format_metric(0.5, 0.0625) == "0.500 ±0.062"

    def test_metric_row_spread(self):
        evaluations = [Evaluation(ap=0.2, spearman=0.0, ndcg=0.5), Evaluation(ap=0.4, spearman=0.5, ndcg=0.7)]
        row = MetricRow.from_evaluations("randomized", evaluations, kind="baseline")
        assert row.ap == pytest.approx(0.3) and row.ap_std == pytest.approx(0.1)
        assert row.playoff_hits is None
        with pytest.raises(DataValidationError):
            MetricRow.from_evaluations("none", [])

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("", encoding="utf-8")
        with pytest.raises(SeasonRankerError) as info:
            emit_report(self.basketball_report(), "text", str(blocker / "sub"))
        assert info.value.to_dict()["error"] == "Runtime Error"


def difference_rows(season):
    vectors = season.stats_by_team()
    home = np.array([vectors[game.home_team] for game in season.games])
    away = np.array([vectors[game.away_team] for game in season.games])
    return home - away


def logistic_order(train_seasons, test):
    """Standings from a logistic regression on home-minus-away statistics, tallied like the models."""
    normalization = fit_normalization([record for season in train_seasons for record in season.stats])
    seasons = [normalize_season(season, normalization) for season in train_seasons]
    rows = np.vstack([difference_rows(season) for season in seasons])
    signs = np.concatenate([[1.0 if game.home_won else -1.0 for game in season.games] for season in seasons])
    design = np.hstack([rows, np.ones((len(rows), 1))])

    def loss(theta):
        margins = signs * (design @ theta)
        value = np.logaddexp(0.0, -margins).sum() + 1e-3 * theta @ theta
        gradient = -design.T @ (signs * expit(-margins)) + 2e-3 * theta
        return value, gradient

    theta = minimize(loss, np.zeros(design.shape[1]), jac=True, method="L-BFGS-B").x
    target = normalize_season(test, normalization)
    values = difference_rows(target) @ theta[:-1]
    scores = [
        GameScore(game_index=game.game_index, score=float(v), predicted_home_win=bool(v >= 0.0))
        for game, v in zip(target.games, values)
    ]
    return standings_from_tally(tally_rank(target.games, scores, teams=target.team_ids)).team_ids


@pytest.mark.slow
class TestSyntheticLeagueQuality:
    SEEDS = range(10)

    def quality(self, order, truth):
        return spearman_rs(order, truth), ndcg(order, assign_relevance(truth), len(truth))

    def test_triplet_front_end_tracks_team_strength(self):
        config = ExperimentConfig.from_yaml(sport="rugby")
        model, oracle = [], []
        for seed in self.SEEDS:
            league = generate_synthetic_league(SyntheticLeagueSpec(teams=15, seed=seed))
            train_seasons, test = temporal_split(league.seasons)
            truth = list(league.strength_order(len(league.seasons) - 1))
            _, standings = fit_and_predict(ModelKey.GBM_NDCG_TRIPLET, train_seasons, test, config, seed=seed)
            model.append(self.quality(standings.team_ids, truth))
            oracle.append(self.quality(logistic_order(train_seasons, test), truth))

        model_rs, model_ndcg = np.mean(model, axis=0)
        oracle_rs, oracle_ndcg = np.mean(oracle, axis=0)
        assert model_rs >= oracle_rs - 0.05
        assert model_ndcg >= oracle_ndcg - 0.05
