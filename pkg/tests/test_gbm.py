import numpy as np
import pytest
from pydantic import ValidationError

from season_ranker.models.gbm import (
    BoostConfig,
    QueryGroup,
    boost_fit,
    line_search_leaf_steps,
    load_ensemble,
    predict,
    save_ensemble,
    stack_groups,
    staged_predict,
)
from season_ranker.models.objectives import (
    Objective,
    fit_constant,
    group_pairs,
    ndcg_scaled_pairwise_gradients,
    pairwise_logistic_gradients,
    pseudo_residuals,
)
from season_ranker.models.tree import best_split, fit_tree
from season_ranker.ranking.metrics import ndcg_from_labels
from season_ranker.utils.errors import DataValidationError, ParseError


def ranked_groups(rng, groups=20, size=20):
    """Groups whose graded labels rise with the first feature."""
    result = []
    for g in range(groups):
        rows = rng.uniform(-1.0, 1.0, size=(size, 3))
        labels = np.digitize(rows[:, 0], [-0.6, -0.2, 0.2, 0.6]).astype(float)
        result.append(QueryGroup(key=f"g{g}", rows=rows, labels=labels))
    return result


class TestObjectives:
    def test_constants(self):
        assert fit_constant([1.0, 2.0, 3.0], Objective.SQUARED_ERROR) == 2.0
        assert fit_constant([1.0, 1.0, 0.0], Objective.LOGISTIC) == pytest.approx(np.log(2.0), abs=1e-6)
        assert fit_constant([3.0, 1.0], Objective.NDCG_SCALED_PAIRWISE) == 0.0

    def test_constant_of_nothing(self):
        with pytest.raises(DataValidationError):
            fit_constant([], Objective.SQUARED_ERROR)

    def test_pointwise_residuals(self):
        np.testing.assert_allclose(pseudo_residuals([1.0, 0.0], [0.5, 0.5], Objective.SQUARED_ERROR), [0.5, -0.5])
        np.testing.assert_allclose(pseudo_residuals([1.0, 0.0], [0.0, 0.0], Objective.LOGISTIC), [0.5, -0.5])

    def test_one_pair_gradient(self):
        gradient = pairwise_logistic_gradients([0.0, 0.0], [1.0, 0.0])
        np.testing.assert_allclose(gradient, [-0.5, 0.5])

    def test_equal_labels_have_no_pairs(self):
        np.testing.assert_array_equal(pairwise_logistic_gradients([0.3, -1.0, 2.0], [1.0, 1.0, 1.0]), 0.0)
        np.testing.assert_array_equal(ndcg_scaled_pairwise_gradients([0.3, -1.0, 2.0], [2.0, 2.0, 2.0]), 0.0)

    def test_pairs_stay_inside_groups(self):
        heads, tails = group_pairs([1.0, 0.0, 5.0, 4.0], [0, 0, 1, 1])
        assert sorted(zip(heads.tolist(), tails.tolist())) == [(0, 1), (2, 3)]

    def test_ranking_residuals_balance_per_group(self, rng):
        labels = rng.integers(0, 4, size=12).astype(float)
        scores = rng.normal(size=12)
        groups = np.repeat([0, 1, 2], 4)
        for objective in (Objective.PAIRWISE_LOGISTIC, Objective.NDCG_SCALED_PAIRWISE):
            residuals = pseudo_residuals(labels, scores, objective, groups)
            for group in range(3):
                assert abs(residuals[groups == group].sum()) < 1e-12

    def test_ndcg_scaling_shrinks_gradients(self, rng):
        labels = np.array([3.0, 2.0, 1.0, 0.0])
        scores = rng.normal(size=4)
        plain = np.abs(pairwise_logistic_gradients(scores, labels))
        scaled = np.abs(ndcg_scaled_pairwise_gradients(scores, labels))
        assert np.all(scaled <= plain + 1e-15)

    def test_non_finite_predictions(self):
        with pytest.raises(DataValidationError):
            pseudo_residuals([1.0], [np.inf], Objective.SQUARED_ERROR)


class TestTree:
    def test_single_split(self):
        rows = np.array([[0.0], [1.0], [2.0], [3.0]])
        tree = fit_tree(rows, [0.0, 0.0, 10.0, 10.0], max_depth=1, min_samples_leaf=1)
        root = tree.nodes[0]
        assert root.feature == 0 and root.threshold == 1.5
        np.testing.assert_array_equal(tree.predict(rows), [0.0, 0.0, 10.0, 10.0])

    def test_tie_goes_to_lowest_feature(self):
        column = np.array([0.0, 1.0, 2.0, 3.0])
        split = best_split(np.column_stack([column, column]), np.array([0.0, 0.0, 10.0, 10.0]), 1)
        assert split[0] == 0 and split[1] == 1.5

    def test_min_samples_leaf_blocks_splits(self):
        rows = np.array([[0.0], [1.0], [2.0]])
        tree = fit_tree(rows, [0.0, 0.0, 9.0], max_depth=3, min_samples_leaf=2)
        assert tree.depth() == 0
        assert tree.nodes[0].value == 3.0

    def test_constant_residuals_make_a_leaf(self, rng):
        tree = fit_tree(rng.normal(size=(10, 2)), np.full(10, 4.0), max_depth=3)
        assert len(tree.nodes) == 1

    def test_depth_is_bounded(self, rng):
        rows = rng.normal(size=(200, 3))
        tree = fit_tree(rows, rng.normal(size=200), max_depth=3, min_samples_leaf=2)
        assert tree.depth() <= 3
        assert len(tree.leaves) <= 8
        assert all(tree.nodes[leaf].n_samples >= 2 for leaf in tree.leaves)

    def test_rejects_mismatched_input(self):
        with pytest.raises(DataValidationError):
            fit_tree(np.zeros((3, 1)), [1.0, 2.0])
        with pytest.raises(DataValidationError):
            fit_tree(np.zeros((2, 1)), [1.0, np.nan])


class TestLineSearch:
    def test_bounded_search_matches_closed_form(self, rng):
        rows = rng.normal(size=(30, 2))
        labels = rows[:, 0] * 2.0 + rng.normal(size=30)
        predictions = np.zeros(30)
        tree = fit_tree(rows, labels, max_depth=2)
        closed = line_search_leaf_steps(tree, rows, labels, predictions, Objective.SQUARED_ERROR)
        searched = line_search_leaf_steps(
            tree, rows, labels, predictions, Objective.SQUARED_ERROR, closed_form=False
        )
        assert closed.keys() == searched.keys()
        for leaf in closed:
            assert searched[leaf] == pytest.approx(closed[leaf], abs=1e-6)

    def test_single_leaf_ranking_step_is_zero(self, rng):
        rows = rng.normal(size=(6, 2))
        tree = fit_tree(rows, rng.normal(size=6), max_depth=0)
        steps = line_search_leaf_steps(
            tree, rows, np.arange(6.0), np.zeros(6), Objective.PAIRWISE_LOGISTIC
        )
        assert steps == {0: 0.0}

    def test_ranking_step_moves_the_better_leaf_up(self):
        rows = np.array([[0.0], [1.0], [2.0], [3.0]])
        labels = np.array([0.0, 0.0, 1.0, 1.0])
        tree = fit_tree(rows, labels, max_depth=1, min_samples_leaf=1)
        steps = line_search_leaf_steps(tree, rows, labels, np.zeros(4), Objective.PAIRWISE_LOGISTIC)
        low, high = tree.nodes[0].left, tree.nodes[0].right
        assert steps[low] < 0.0 < steps[high]

    def test_bracket_edge_warning(self, caplog):
        rows = np.array([[0.0], [1.0]])
        labels = np.array([1.0, 0.0])
        tree = fit_tree(rows, labels, max_depth=1, min_samples_leaf=1)
        with caplog.at_level("WARNING", logger="season_ranker"):
            steps = line_search_leaf_steps(tree, rows, labels, np.zeros(2), Objective.PAIRWISE_LOGISTIC)
        assert all(abs(abs(step) - 10.0) < 1e-5 for step in steps.values())
        assert "bracket edge" in caplog.text


class TestBoosting:
    def test_squared_error_fits_a_parabola(self):
        x = np.linspace(-1.0, 1.0, 21)
        config = BoostConfig(rounds=100, max_depth=2, learning_rate=0.1, objective=Objective.SQUARED_ERROR)
        ensemble = boost_fit(x[:, None], x**2, config)
        assert np.mean((predict(ensemble, x[:, None]) - x**2) ** 2) <= 0.05
        assert all(b <= a + 1e-9 for a, b in zip(ensemble.history, ensemble.history[1:]))

    def test_zero_rounds_predicts_the_constant(self, rng):
        rows = rng.normal(size=(5, 2))
        ensemble = boost_fit(rows, [1.0, 2.0, 3.0, 4.0, 5.0], BoostConfig(rounds=0, objective="squared_error"))
        np.testing.assert_array_equal(predict(ensemble, rows), 3.0)
        assert len(ensemble.history) == 1

    def test_zero_learning_rate_predicts_the_constant(self, rng):
        rows = rng.normal(size=(8, 2))
        config = BoostConfig(rounds=5, learning_rate=0.0, objective=Objective.LOGISTIC)
        ensemble = boost_fit(rows, [1, 0, 1, 1, 0, 1, 0, 1], config)
        np.testing.assert_array_equal(predict(ensemble, rows), ensemble.f0)

    def test_staged_predictions_end_at_predict(self, rng):
        rows = rng.normal(size=(20, 2))
        config = BoostConfig(rounds=7, objective=Objective.SQUARED_ERROR)
        ensemble = boost_fit(rows, rows[:, 1], config)
        stages = list(staged_predict(ensemble, rows))
        assert len(stages) == 7
        np.testing.assert_allclose(stages[-1], predict(ensemble, rows), rtol=0, atol=1e-12)

    @pytest.mark.parametrize("objective", [Objective.PAIRWISE_LOGISTIC, Objective.NDCG_SCALED_PAIRWISE])
    def test_ranking_objectives_learn_the_order(self, objective):
        rng = np.random.default_rng(7)
        groups = ranked_groups(rng)
        config = BoostConfig(rounds=50, max_depth=3, learning_rate=0.1, objective=objective)
        ensemble = boost_fit(groups, config=config)
        scores = [ndcg_from_labels(predict(ensemble, g.rows), g.labels, 10) for g in groups]
        assert np.mean(scores) >= 0.9

        baseline = np.mean([ndcg_from_labels(np.full(len(g.labels), ensemble.f0), g.labels, 10) for g in groups])
        staged = zip(*(staged_predict(ensemble, g.rows) for g in groups))
        for round_scores in staged:
            value = np.mean([ndcg_from_labels(s, g.labels, 10) for s, g in zip(round_scores, groups)])
            assert value >= baseline
        assert ensemble.history[-1] < ensemble.history[0]

    def test_predictions_follow_row_permutation(self, rng):
        groups = ranked_groups(rng, groups=5, size=12)
        ensemble = boost_fit(groups, config=BoostConfig(rounds=10, max_depth=3, objective=Objective.NDCG_SCALED_PAIRWISE))
        rows = np.vstack([g.rows for g in groups])
        permutation = rng.permutation(len(rows))
        np.testing.assert_array_equal(predict(ensemble, rows[permutation]), predict(ensemble, rows)[permutation])

    def test_width_is_checked(self, rng):
        ensemble = boost_fit(rng.normal(size=(6, 2)), np.arange(6.0), BoostConfig(rounds=1, objective="squared_error"))
        with pytest.raises(DataValidationError):
            predict(ensemble, np.zeros((1, 3)))

    def test_duplicate_group_keys(self, rng):
        group = QueryGroup(key="2017", rows=rng.normal(size=(3, 2)), labels=np.arange(3.0))
        with pytest.raises(DataValidationError):
            stack_groups([group, group])

    def test_config_bounds(self):
        with pytest.raises(ValidationError):
            BoostConfig(learning_rate=1.5)
        with pytest.raises(ValidationError):
            BoostConfig(rounds=-1)


class TestEnsembleFile:
    def test_round_trip_is_exact(self, tmp_path, rng):
        groups = ranked_groups(rng, groups=4, size=10)
        ensemble = boost_fit(groups, config=BoostConfig(rounds=6, objective=Objective.NDCG_SCALED_PAIRWISE))
        path = save_ensemble(str(tmp_path / "ensemble.txt"), ensemble)
        loaded = load_ensemble(path)

        rows = rng.normal(size=(50, 3))
        np.testing.assert_array_equal(predict(loaded, rows), predict(ensemble, rows))
        assert loaded.config == ensemble.config
        assert loaded.history == ensemble.history
        for a, b in zip(loaded.stages, ensemble.stages):
            assert a.tree == b.tree
            assert a.steps == b.steps

        again = save_ensemble(str(tmp_path / "again.txt"), loaded)
        assert open(again, encoding="utf-8").read() == open(path, encoding="utf-8").read()

    def test_wrong_header(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("something else\n", encoding="utf-8")
        with pytest.raises(ParseError):
            load_ensemble(str(path))

    def test_truncated_file(self, tmp_path, rng):
        ensemble = boost_fit(rng.normal(size=(20, 2)), rng.normal(size=20), BoostConfig(rounds=3, objective="squared_error"))
        path = save_ensemble(str(tmp_path / "ensemble.txt"), ensemble)
        lines = open(path, encoding="utf-8").read().splitlines()
        (tmp_path / "cut.txt").write_text("\n".join(lines[:-2]) + "\n", encoding="utf-8")
        with pytest.raises(ParseError):
            load_ensemble(str(tmp_path / "cut.txt"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ParseError):
            load_ensemble(str(tmp_path / "absent.txt"))
