"""Tally rank: per-game scores to league standings, plus the two baselines."""
import json
import os
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, model_validator

from season_ranker.data.ingest import Conference
from season_ranker.utils.errors import DataValidationError, ParseError
from season_ranker.utils.logging_config import logger
from season_ranker.utils.utils import derive_seed

DEFAULT_TRIALS = 30


class BaselineKind(str, Enum):
    NAIVE = "naive_previous_season"
    RANDOMIZED = "randomized"


class TallyBoard(BaseModel):
    model_config = ConfigDict(frozen=True)

    tallies: Dict[str, float]

    def total(self):
        return float(np.sum(list(self.tallies.values()))) if self.tallies else 0.0


class StandingsEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    rank: int
    team_id: str
    tally: Optional[float] = None


class Standings(BaseModel):
    model_config = ConfigDict(frozen=True)

    entries: Tuple[StandingsEntry, ...]
    tag: str = "league"

    @model_validator(mode="after")
    def _check_ranks(self):
        ranks = [entry.rank for entry in self.entries]
        if ranks != list(range(1, len(ranks) + 1)):
            raise ValueError(f"{self.tag}: ranks must run 1..n without gaps")
        if len(set(self.team_ids)) != len(self.entries):
            raise ValueError(f"{self.tag}: a team appears twice")
        tallies = [entry.tally for entry in self.entries]
        if None not in tallies and any(b > a for a, b in zip(tallies, tallies[1:])):
            raise ValueError(f"{self.tag}: standings must be non-increasing in tally")
        return self

    @property
    def team_ids(self):
        return tuple(entry.team_id for entry in self.entries)

    def __len__(self):
        return len(self.entries)

    def top(self, k):
        return self.team_ids[:k]


def standings_from_order(order, tag="league", tallies=None):
    """Builds standings from a best-first team order."""
    entries = tuple(
        StandingsEntry(rank=rank, team_id=team, tally=None if tallies is None else tallies[team])
        for rank, team in enumerate(order, start=1)
    )
    return Standings(entries=entries, tag=tag)


def tally_rank(games, scores, teams=(), use_actual=False):
    """Adds |score| to each game's predicted winner and subtracts it from the loser.

    ``teams`` seeds the board so teams without a scored game still appear.
    ``use_actual`` switches to actual winners, for diagnosis only.
    """
    games, scores = list(games), list(scores)
    if len(games) != len(scores):
        raise DataValidationError(f"{len(games)} games but {len(scores)} scores")

    tallies = {team: 0.0 for team in teams}
    for game, score in zip(games, scores):
        if score.game_index != game.game_index:
            raise DataValidationError(
                f"score for game {score.game_index} is aligned with game {game.game_index}"
            )
        magnitude = abs(score.score)
        home_wins = game.home_won if use_actual else score.predicted_home_win
        sign = 1.0 if home_wins else -1.0
        tallies[game.home_team] = tallies.get(game.home_team, 0.0) + sign * magnitude
        tallies[game.away_team] = tallies.get(game.away_team, 0.0) - sign * magnitude

    board = TallyBoard(tallies=tallies)
    logger.debug(f"👉 Tallied {len(games)} games over {len(tallies)} teams, total {board.total():.3e}")
    return board


def standings_from_tally(board, tag="league"):
    """Descending tally; ties go to the lexicographically smaller team id."""
    if not board.tallies:
        raise DataValidationError("cannot rank an empty tally board")
    order = sorted(board.tallies, key=lambda team: (-board.tallies[team], team))
    return standings_from_order(order, tag=tag, tallies=board.tallies)


def standings_from_results(games, teams=(), tag="actual"):
    """Actual standings from results: +1 per win, -1 per loss."""
    tallies = {team: 0.0 for team in teams}
    for game in games:
        sign = 1.0 if game.home_won else -1.0
        tallies[game.home_team] = tallies.get(game.home_team, 0.0) + sign
        tallies[game.away_team] = tallies.get(game.away_team, 0.0) - sign
    return standings_from_tally(TallyBoard(tallies=tallies), tag=tag)


def conference_split(standings, league):
    """East and West standings, keeping the merged order and renumbering ranks."""
    if not league.is_conference_league:
        raise DataValidationError(f"{league.sport.value} is a single pool, it has no conferences")

    split = {}
    for conference in (Conference.EAST, Conference.WEST):
        entries = [entry for entry in standings.entries if league.pool_of(entry.team_id) is conference]
        split[conference] = Standings(
            entries=tuple(
                entry.model_copy(update={"rank": rank}) for rank, entry in enumerate(entries, start=1)
            ),
            tag=f"{standings.tag}-{conference.value}",
        )

    unassigned = len(standings) - len(split[Conference.EAST]) - len(split[Conference.WEST])
    if unassigned:
        raise DataValidationError(f"{unassigned} teams in the standings have no conference")
    return split[Conference.EAST], split[Conference.WEST]


def naive_baseline(previous_season_actual, teams=None):
    """Last season's actual standings, verbatim, as this season's prediction."""
    if previous_season_actual is None:
        raise DataValidationError("the naive baseline needs the previous season's standings")
    if teams is not None and set(teams) != set(previous_season_actual.team_ids):
        gone = sorted(set(previous_season_actual.team_ids) - set(teams))
        new = sorted(set(teams) - set(previous_season_actual.team_ids))
        raise DataValidationError(f"roster changed between seasons: left {gone}, joined {new}")
    return standings_from_order(previous_season_actual.team_ids, tag=BaselineKind.NAIVE.value)


def randomized_baseline(teams, trials=DEFAULT_TRIALS, rng_seed=0):
    """``trials`` independent uniform permutations; tags carry the trial index."""
    teams = sorted(teams)
    if not teams:
        raise DataValidationError("randomized baseline needs at least one team")
    rng = np.random.default_rng(derive_seed(rng_seed, BaselineKind.RANDOMIZED.value))
    return [
        standings_from_order([teams[i] for i in rng.permutation(len(teams))], tag=f"randomized-{trial}")
        for trial in range(trials)
    ]


def write_standings_csv(standings, path):
    frame = pd.DataFrame(
        {
            "rank": [entry.rank for entry in standings.entries],
            "team": list(standings.team_ids),
            "tally": [entry.tally for entry in standings.entries],
        }
    )
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def read_standings_csv(path, tag=None):
    """Reads ``rank,team[,tally]``; the tally column is optional."""
    if not os.path.exists(path):
        raise ParseError(f"file not found: {path}", path=path)
    frame = pd.read_csv(path, dtype={"team": str})
    if list(frame.columns[:2]) != ["rank", "team"]:
        raise ParseError("standings files start with columns rank,team", path=path, row=1)
    frame = frame.sort_values("rank", kind="stable")
    tallies = None
    if "tally" in frame.columns and frame["tally"].notna().all():
        tallies = dict(zip(frame["team"], frame["tally"].astype(float)))
    try:
        return standings_from_order(list(frame["team"]), tag=tag or os.path.basename(path), tallies=tallies)
    except ValueError as e:
        raise ParseError(str(e), path=path)


def standings_to_json(standings):
    return json.dumps(standings.model_dump(mode="json"), sort_keys=True)
