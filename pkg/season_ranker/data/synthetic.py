"""Synthetic leagues for exercising the pipeline without the real datasets.

Every team has a latent strength per season. Its statistics are noisy linear
functions of that strength and home teams win with probability
expit((s_home - s_away + home_advantage) / outcome_noise).
"""
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import expit

from season_ranker.data.ingest import (
    Conference,
    GameRecord,
    Schema,
    SeasonDataset,
    Sport,
    TeamSeasonStats,
    build_season,
    league_file_paths,
    stats_columns,
    write_conferences_csv,
    write_games_csv,
    write_standings_csv,
    write_stats_csv,
)
from season_ranker.ranking.ranker import standings_from_results
from season_ranker.utils.logging_config import logger
from season_ranker.utils.utils import make_rng


class SyntheticLeagueSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    sport: Sport = Sport.RUGBY
    teams: int = Field(15, ge=2)
    seasons: int = Field(4, ge=2)
    first_season: int = Field(2015, ge=1000, le=9999)
    # None draws strengths from N(0, 1)
    strengths: Optional[Tuple[float, ...]] = None
    feature_noise: float = Field(0.3, ge=0)
    # 0 makes every result deterministic: the stronger team wins, the home team on equal strength
    outcome_noise: float = Field(1.0, ge=0)
    season_drift: float = Field(0.1, ge=0)
    home_advantage: float = 0.0
    round_robin_repeats: int = Field(1, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _check_shape(self):
        if self.strengths is not None and len(self.strengths) != self.teams:
            raise ValueError(f"{len(self.strengths)} strengths for {self.teams} teams")
        if self.sport is Sport.BASKETBALL and self.teams % 2:
            raise ValueError("a basketball league needs an even team count for two conferences")
        return self

    @property
    def conference_size(self):
        return self.teams // 2 if self.sport is Sport.BASKETBALL else self.teams


@dataclass(frozen=True)
class SyntheticLeague:
    spec: SyntheticLeagueSpec
    seasons: List[SeasonDataset]
    strengths: List[Dict[str, float]]

    def strength_order(self, index):
        """Team ids by descending latent strength in season ``index``."""
        strengths = self.strengths[index]
        return tuple(sorted(strengths, key=lambda team: (-strengths[team], team)))


def team_names(spec):
    return [f"Team {i + 1:02d}" for i in range(spec.teams)]


def conference_map(spec, teams):
    if spec.sport is not Sport.BASKETBALL:
        return {}
    half = spec.conference_size
    return {team: Conference.EAST if i < half else Conference.WEST for i, team in enumerate(teams)}


def _season_stats(spec, season, teams, strength, loadings, offsets, rng):
    _, features = stats_columns(Schema.stats_for(spec.sport))
    noise = rng.standard_normal((len(teams), len(features))) * spec.feature_noise
    matrix = offsets * (1.0 + 0.1 * (strength[:, None] * loadings[None, :] + noise))
    return [
        TeamSeasonStats(team_id=team, season_id=season, features=tuple(row.tolist()), feature_names=tuple(features))
        for team, row in zip(teams, matrix)
    ]


def _season_games(spec, season, teams, strength, rng):
    games = []
    for _ in range(spec.round_robin_repeats):
        for home in range(len(teams)):
            for away in range(len(teams)):
                if home == away:
                    continue
                margin = strength[home] - strength[away] + spec.home_advantage
                if spec.outcome_noise == 0:
                    home_won = margin >= 0
                else:
                    home_won = rng.random() < expit(margin / spec.outcome_noise)
                games.append(
                    GameRecord(
                        season_id=season,
                        game_index=len(games),
                        home_team=teams[home],
                        away_team=teams[away],
                        home_won=bool(home_won),
                    )
                )
    return games


def generate_synthetic_league(spec):
    """Seeded league; the same spec always yields the same seasons."""
    teams = team_names(spec)
    conferences = conference_map(spec, teams)
    _, features = stats_columns(Schema.stats_for(spec.sport))

    rng = make_rng(spec.seed, "synthetic-league")
    strength = (
        np.asarray(spec.strengths, dtype=float) if spec.strengths is not None else rng.standard_normal(spec.teams)
    )
    # per-statistic weight and sign; negative weights fall as strength rises
    loadings = rng.uniform(0.5, 1.5, len(features)) * rng.choice([-1.0, 1.0], len(features))
    offsets = rng.uniform(10.0, 100.0, len(features))

    seasons, strengths = [], []
    for index in range(spec.seasons):
        season = spec.first_season + index
        if index:
            strength = strength + spec.season_drift * rng.standard_normal(spec.teams)
        season_rng = make_rng(spec.seed, "synthetic-season", season)
        stats = _season_stats(spec, season, teams, strength, loadings, offsets, season_rng)
        games = _season_games(spec, season, teams, strength, season_rng)
        actual = standings_from_results(games, teams=teams).team_ids
        seasons.append(
            build_season(
                spec.sport, stats, games, conferences, actual, conference_size=spec.conference_size,
                metric_cutoff_k=min(15, spec.conference_size), playoff_cutoff=min(8, spec.conference_size),
            )
        )
        strengths.append(dict(zip(teams, strength.tolist())))

    logger.info(
        f"✅ Generated {spec.seasons} synthetic {spec.sport.value} seasons of {spec.teams} teams "
        f"({len(seasons[0].games)} games each)"
    )
    return SyntheticLeague(spec=spec, seasons=seasons, strengths=strengths)


def write_synthetic_league(league, out_dir):
    """Writes stats, games, standings (and conferences) files in the ingest layout."""
    os.makedirs(out_dir, exist_ok=True)
    sport = league.spec.sport
    schema = Schema.stats_for(sport)
    written = []
    for dataset in league.seasons:
        paths = league_file_paths(out_dir, sport, dataset.season_id)
        written.append(write_stats_csv(list(dataset.stats), paths["stats"], schema))
        written.append(write_games_csv(list(dataset.games), paths["games"]))
        written.append(write_standings_csv(dataset.actual_order, paths["standings"]))
    if sport is Sport.BASKETBALL:
        path = os.path.join(out_dir, f"{sport.value}_conferences.csv")
        written.append(write_conferences_csv(dict(league.seasons[0].league.conferences), path))
    logger.info(f"✅ Wrote {len(written)} synthetic league files to {out_dir}")
    return written
