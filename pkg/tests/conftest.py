import numpy as np
import pytest

from season_ranker.data.ingest import GameRecord, Sport, TeamSeasonStats, build_season
from season_ranker.data.synthetic import SyntheticLeagueSpec, generate_synthetic_league
from season_ranker.utils.logging_config import logger


@pytest.fixture(autouse=True)
def package_logger():
    """Undo configure_logging so caplog sees records after a CLI test."""
    yield logger
    for handler in list(logger.handlers):
        handler.close()
    logger.handlers.clear()
    logger.propagate = True
    logger.setLevel("NOTSET")


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def make_stats(season, rows, names=("a", "b")):
    return [
        TeamSeasonStats(team_id=team, season_id=season, features=tuple(values), feature_names=tuple(names))
        for team, values in rows.items()
    ]


def make_games(season, results):
    """``results`` is a list of (home, away, home_won)."""
    return [
        GameRecord(season_id=season, game_index=i, home_team=home, away_team=away, home_won=won)
        for i, (home, away, won) in enumerate(results)
    ]


def tiny_rugby_season(season=2017):
    stats = make_stats(season, {"A": (3.0, 1.0), "B": (2.0, 2.0), "C": (1.0, 3.0)})
    games = make_games(season, [("A", "B", True), ("B", "C", True), ("C", "A", False), ("B", "A", False)])
    return build_season(Sport.RUGBY, stats, games, conference_size=3, metric_cutoff_k=3, playoff_cutoff=2)


@pytest.fixture
def tiny_season():
    return tiny_rugby_season()


@pytest.fixture(scope="session")
def rugby_league():
    spec = SyntheticLeagueSpec(sport=Sport.RUGBY, teams=6, seasons=4, seed=3, outcome_noise=0.5)
    return generate_synthetic_league(spec)


@pytest.fixture(scope="session")
def basketball_league():
    spec = SyntheticLeagueSpec(sport=Sport.BASKETBALL, teams=8, seasons=4, seed=5, outcome_noise=0.5)
    return generate_synthetic_league(spec)
