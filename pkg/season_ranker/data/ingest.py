"""Parsing, validation, normalization and splitting of season datasets.

Two kinds of file feed a season: a team statistics file (one row per team,
end-of-season aggregates) and a games file (one row per fixture). The
column layouts live in ``schemas.yaml`` next to this module.
"""
import os
import re
import sys
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd
import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from season_ranker.utils.errors import DataValidationError, ParseError
from season_ranker.utils.logging_config import logger
from season_ranker.utils.utils import derive_seed

SCHEMA_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), "schemas.yaml")

with open(SCHEMA_PATH, "r", encoding="utf-8") as _file:
    SCHEMAS = yaml.safe_load(_file)

DRAW_TOKENS = {"draw", "d"}
TRUE_TOKENS = {"1", "true", "t", "yes", "y"} | DRAW_TOKENS
FALSE_TOKENS = {"0", "false", "f", "no", "n"}


class Sport(str, Enum):
    BASKETBALL = "basketball"
    RUGBY = "rugby"


class Conference(str, Enum):
    EAST = "East"
    WEST = "West"
    NONE = "None"


class Schema(str, Enum):
    RUGBY_STATS = "rugby_stats"
    NBA_STATS = "nba_stats"
    RUGBY_GAMES = "rugby_games"
    NBA_GAMES = "nba_games"

    @property
    def is_games(self):
        return self in (Schema.RUGBY_GAMES, Schema.NBA_GAMES)

    @property
    def sport(self):
        return Sport.RUGBY if self.value.startswith("rugby") else Sport.BASKETBALL

    @classmethod
    def stats_for(cls, sport):
        return cls.RUGBY_STATS if Sport(sport) is Sport.RUGBY else cls.NBA_STATS

    @classmethod
    def games_for(cls, sport):
        return cls.RUGBY_GAMES if Sport(sport) is Sport.RUGBY else cls.NBA_GAMES


def stats_columns(schema):
    """(id column, feature columns) for a statistics schema."""
    layout = SCHEMAS[Schema(schema).value]
    return layout["id_column"], list(layout["features"])


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


class LeagueConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    sport: Sport
    conferences: Dict[str, Conference] = Field(default_factory=dict)
    metric_cutoff_k: int = Field(15, ge=1)
    playoff_cutoff: int = Field(8, ge=1)
    conference_size: int = Field(15, ge=1)

    @model_validator(mode="after")
    def _check_shape(self):
        if self.metric_cutoff_k > self.conference_size:
            raise ValueError(f"metric_cutoff_k={self.metric_cutoff_k} exceeds conference size {self.conference_size}")
        if self.playoff_cutoff > self.conference_size:
            raise ValueError(f"playoff_cutoff={self.playoff_cutoff} exceeds conference size {self.conference_size}")
        if not self.conferences:
            return self

        counts = {}
        for conference in self.conferences.values():
            counts[conference] = counts.get(conference, 0) + 1

        if self.sport is Sport.BASKETBALL:
            expected = {Conference.EAST: self.conference_size, Conference.WEST: self.conference_size}
            if counts != expected:
                raise ValueError(
                    f"basketball needs two conferences of {self.conference_size} teams, got "
                    f"{ {c.value: n for c, n in counts.items()} }"
                )
        elif set(counts) != {Conference.NONE} or counts[Conference.NONE] != self.conference_size:
            raise ValueError(f"rugby is a single pool of {self.conference_size} teams")
        return self

    @property
    def is_conference_league(self):
        return self.sport is Sport.BASKETBALL

    def pool_of(self, team_id):
        return self.conferences.get(team_id, Conference.NONE)

    def with_teams(self, team_ids):
        """Rugby helper: a single-pool config listing the given teams."""
        conferences = {team: Conference.NONE for team in team_ids}
        return LeagueConfig.model_validate({**self.model_dump(), "conferences": conferences})


class TeamSeasonStats(BaseModel):
    model_config = ConfigDict(frozen=True)

    team_id: str
    season_id: int
    features: Tuple[float, ...]
    feature_names: Tuple[str, ...]

    @model_validator(mode="after")
    def _check_lengths(self):
        if len(self.features) != len(self.feature_names):
            raise ValueError(
                f"{self.team_id}/{self.season_id}: {len(self.features)} features but "
                f"{len(self.feature_names)} feature names"
            )
        if not np.all(np.isfinite(self.features)):
            raise ValueError(f"{self.team_id}/{self.season_id}: non-finite feature value")
        return self

    def vector(self):
        return np.asarray(self.features, dtype=float)


class GameRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    season_id: int
    game_index: int = Field(ge=0)
    home_team: str
    away_team: str
    home_won: bool

    @model_validator(mode="after")
    def _check_teams(self):
        if self.home_team == self.away_team:
            raise ValueError(f"game {self.season_id}/{self.game_index}: team {self.home_team} plays itself")
        return self


class SeasonDataset(BaseModel):
    model_config = ConfigDict(frozen=True)

    league: LeagueConfig
    stats: Tuple[TeamSeasonStats, ...]
    games: Tuple[GameRecord, ...]
    # Actual finishing order (team ids, champion first) when a standings file was supplied.
    actual_order: Optional[Tuple[str, ...]] = None

    @field_validator("stats")
    @classmethod
    def _check_stats(cls, stats):
        if not stats:
            raise ValueError("a season needs team statistics")
        seasons = {record.season_id for record in stats}
        if len(seasons) != 1:
            raise ValueError(f"statistics span several seasons: {sorted(seasons)}")
        names = {record.feature_names for record in stats}
        if len(names) != 1:
            raise ValueError("feature names differ between records of one season")
        teams = [record.team_id for record in stats]
        if len(set(teams)) != len(teams):
            raise ValueError("duplicate team statistics record")
        return stats

    @model_validator(mode="after")
    def _check_references(self):
        teams = {record.team_id for record in self.stats}
        for game in self.games:
            if game.season_id != self.season_id:
                raise ValueError(f"game {game.game_index} belongs to season {game.season_id}, not {self.season_id}")
            for team in (game.home_team, game.away_team):
                if team not in teams:
                    raise ValueError(f"game {game.game_index}: no statistics record for team {team!r}")
        if self.actual_order is not None and set(self.actual_order) != teams:
            raise ValueError("actual standings list a different set of teams than the statistics")
        return self

    @property
    def season_id(self):
        return self.stats[0].season_id

    @property
    def team_ids(self):
        return [record.team_id for record in self.stats]

    @property
    def feature_names(self):
        return self.stats[0].feature_names

    def stats_by_team(self):
        return {record.team_id: record.vector() for record in self.stats}


class NormalizationParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    feature_names: Tuple[str, ...]
    minimums: Tuple[float, ...]
    maximums: Tuple[float, ...]

    @model_validator(mode="after")
    def _check_ranges(self):
        if not (len(self.feature_names) == len(self.minimums) == len(self.maximums)):
            raise ValueError("normalization parameters have inconsistent lengths")
        for name, low, high in zip(self.feature_names, self.minimums, self.maximums):
            if high < low:
                raise ValueError(f"feature {name!r}: max {high} < min {low}")
        return self


@dataclass(frozen=True)
class TrainingPair:
    home: np.ndarray
    away: np.ndarray
    label: int  # 0 = home win, 1 = home loss


@dataclass(frozen=True)
class TrainingTriplet:
    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray


@dataclass(frozen=True)
class DatasetFragment:
    """What one parsed file contributes to a season dataset."""

    schema: Schema
    stats: Tuple[TeamSeasonStats, ...] = ()
    games: Tuple[GameRecord, ...] = ()


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _read_frame(path):
    if not os.path.exists(path):
        raise ParseError(f"file not found: {path}", path=path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise ParseError("empty file, no header row", path=path, row=1)
    if frame.empty:
        raise ParseError("no data rows", path=path, row=2)
    return frame


def _check_header(frame, expected, path):
    found = list(frame.columns)
    if found == list(expected):
        return
    missing = [column for column in expected if column not in found]
    extra = [column for column in found if column not in expected]
    if missing:
        raise ParseError(f"missing column(s): {missing}", path=path, row=1)
    if extra:
        raise ParseError(f"unexpected column(s): {extra}", path=path, row=1)
    raise ParseError(f"columns out of order, expected {list(expected)}", path=path, row=1)


def _numeric_column(frame, column, path):
    values = pd.to_numeric(frame[column].str.strip(), errors="coerce").to_numpy(dtype=float)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        index = int(bad[0])
        # file line number: header is line 1
        raise ParseError(
            f"non-numeric or non-finite value {frame[column].iloc[index]!r} in column {column!r}",
            path=path,
            row=index + 2,
        )
    return values


def _parse_bool(token, path, row):
    value = token.strip().lower()
    if value in TRUE_TOKENS:
        return True
    if value in FALSE_TOKENS:
        return False
    raise ParseError(f"home_won must be 0/1, true/false or draw, got {token!r}", path=path, row=row)


def season_from_filename(path):
    match = re.search(r"_(\d{4})\.csv$", os.path.basename(path))
    return int(match.group(1)) if match else None


def parse_dataset(path, schema, season=None):
    """Parses one statistics or games CSV into a DatasetFragment.

    Statistics files carry no season column: the season comes from ``season``
    or, failing that, from the ``<sport>_<season>.csv`` file name.
    """
    schema = Schema(schema)
    logger.info(f"📌 Parsing {path} as {schema.value}")
    frame = _read_frame(path)

    if schema.is_games:
        return DatasetFragment(schema=schema, games=tuple(_parse_games(frame, path)))

    season = season if season is not None else season_from_filename(path)
    if season is None:
        raise ParseError("cannot tell the season: pass it explicitly or name the file <sport>_<season>.csv", path=path)

    id_column, features = stats_columns(schema)
    _check_header(frame, [id_column] + features, path)
    matrix = np.column_stack([_numeric_column(frame, column, path) for column in features])

    names = tuple(features)
    records = []
    seen = set()
    for index, team in enumerate(frame[id_column].str.strip()):
        if not team:
            raise ParseError(f"empty {id_column!r}", path=path, row=index + 2)
        if team in seen:
            raise ParseError(f"duplicate team {team!r}", path=path, row=index + 2)
        seen.add(team)
        records.append(
            TeamSeasonStats(
                team_id=sys.intern(team),
                season_id=int(season),
                features=tuple(float(v) for v in matrix[index]),
                feature_names=names,
            )
        )

    logger.info(f"✅ Parsed {len(records)} team records with {len(names)} features from {path}")
    return DatasetFragment(schema=schema, stats=tuple(records))


def _parse_games(frame, path):
    _check_header(frame, SCHEMAS["games"]["columns"], path)
    seasons = _numeric_column(frame, "season", path)
    indices = _numeric_column(frame, "game_index", path)

    games = []
    seen = set()
    for position, row in enumerate(frame.itertuples(index=False)):
        line = position + 2
        season, game_index = seasons[position], indices[position]
        if season != int(season) or game_index != int(game_index) or game_index < 0:
            raise ParseError("season and game_index must be non-negative integers", path=path, row=line)
        key = (int(season), int(game_index))
        if key in seen:
            raise ParseError(f"duplicate (season, game_index) {key}", path=path, row=line)
        seen.add(key)

        home, away = row.home_team.strip(), row.away_team.strip()
        if not home or not away:
            raise ParseError("empty team id", path=path, row=line)
        if home == away:
            raise ParseError(f"team {home!r} plays itself", path=path, row=line)

        games.append(
            GameRecord(
                season_id=key[0],
                game_index=key[1],
                home_team=sys.intern(home),
                away_team=sys.intern(away),
                # draws count as home wins
                home_won=_parse_bool(row.home_won, path, line),
            )
        )

    logger.info(f"✅ Parsed {len(games)} games from {path}")
    return games


def read_standings_csv(path):
    """Team ids in finishing order from a ``rank,team`` file."""
    frame = _read_frame(path)
    _check_header(frame, SCHEMAS["standings"]["columns"], path)
    ranks = _numeric_column(frame, "rank", path)
    order = np.argsort(ranks, kind="stable")
    if sorted(ranks.astype(int).tolist()) != list(range(1, len(ranks) + 1)):
        raise ParseError("ranks must be exactly 1..n", path=path)
    return tuple(sys.intern(frame["team"].iloc[i].strip()) for i in order)


def read_conferences_csv(path):
    frame = _read_frame(path)
    _check_header(frame, SCHEMAS["conferences"]["columns"], path)
    conferences = {}
    for position, row in enumerate(frame.itertuples(index=False)):
        try:
            conferences[sys.intern(row.team.strip())] = Conference(row.conference.strip())
        except ValueError:
            raise ParseError(f"unknown conference {row.conference!r}", path=path, row=position + 2)
    return conferences


# ---------------------------------------------------------------------------
# Writing (inverse of parsing, full float precision)
# ---------------------------------------------------------------------------


def write_stats_csv(stats, path, schema):
    id_column, features = stats_columns(schema)
    if stats and tuple(features) != stats[0].feature_names:
        raise DataValidationError(f"records do not carry the {Schema(schema).value} features", path=str(path))
    frame = pd.DataFrame([record.features for record in stats], columns=features)
    frame.insert(0, id_column, [record.team_id for record in stats])
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def write_games_csv(games, path):
    frame = pd.DataFrame(
        [(g.season_id, g.game_index, g.home_team, g.away_team, int(g.home_won)) for g in games],
        columns=SCHEMAS["games"]["columns"],
    )
    frame.to_csv(path, index=False)
    return path


def write_standings_csv(order, path):
    frame = pd.DataFrame({"rank": range(1, len(order) + 1), "team": list(order)})
    frame.to_csv(path, index=False)
    return path


def write_conferences_csv(conferences, path):
    frame = pd.DataFrame(
        [(team, conference.value) for team, conference in conferences.items()],
        columns=SCHEMAS["conferences"]["columns"],
    )
    frame.to_csv(path, index=False)
    return path


# ---------------------------------------------------------------------------
# League loading
# ---------------------------------------------------------------------------


def league_file_paths(data_dir, sport, season):
    sport = Sport(sport).value
    return {
        "stats": os.path.join(data_dir, f"{sport}_{season}.csv"),
        "games": os.path.join(data_dir, f"{sport}_games_{season}.csv"),
        "standings": os.path.join(data_dir, f"{sport}_standings_{season}.csv"),
    }


def discover_seasons(data_dir, sport):
    pattern = re.compile(rf"^{re.escape(Sport(sport).value)}_(\d{{4}})\.csv$")
    if not os.path.isdir(data_dir):
        raise DataValidationError(f"data directory not found: {data_dir}")
    seasons = sorted(int(m.group(1)) for m in map(pattern.match, os.listdir(data_dir)) if m)
    if not seasons:
        raise DataValidationError(f"no {Sport(sport).value}_<season>.csv files in {data_dir}")
    return seasons


def load_league(data_dir, sport, conferences_path=None, **league_options):
    """Loads every season found in ``data_dir`` into SeasonDatasets, oldest first."""
    sport = Sport(sport)
    seasons = discover_seasons(data_dir, sport)
    logger.info(f"📌 Loading {sport.value} seasons {seasons} from {data_dir}")

    conferences = {}
    if sport is Sport.BASKETBALL:
        conferences_path = conferences_path or os.path.join(data_dir, f"{sport.value}_conferences.csv")
        conferences = read_conferences_csv(conferences_path)

    datasets = []
    for season in seasons:
        paths = league_file_paths(data_dir, sport, season)
        stats = parse_dataset(paths["stats"], Schema.stats_for(sport), season=season).stats
        games = parse_dataset(paths["games"], Schema.games_for(sport)).games
        actual_order = read_standings_csv(paths["standings"]) if os.path.exists(paths["standings"]) else None
        datasets.append(build_season(sport, stats, games, conferences, actual_order, **league_options))

    return datasets


def build_season(sport, stats, games, conferences=None, actual_order=None, **league_options):
    """Assembles and validates one SeasonDataset, wrapping pydantic errors."""
    sport = Sport(sport)
    try:
        league = LeagueConfig(sport=sport, conferences=conferences or {}, **league_options)
        if sport is Sport.RUGBY:
            league = league.with_teams([record.team_id for record in stats])
        else:
            # conference files may list teams from other seasons' rosters
            teams = {record.team_id for record in stats}
            missing = teams - set(league.conferences)
            if missing:
                raise DataValidationError(f"teams without a conference: {sorted(missing)}")
        return SeasonDataset(league=league, stats=tuple(stats), games=tuple(games), actual_order=actual_order)
    except ValueError as e:
        raise DataValidationError(str(e))


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


def fit_normalization(stats):
    if not stats:
        raise DataValidationError("cannot fit normalization on zero records")
    names = stats[0].feature_names
    if any(record.feature_names != names for record in stats):
        raise DataValidationError("feature names differ between records")
    matrix = np.array([record.features for record in stats], dtype=float)
    return NormalizationParams(
        feature_names=names,
        minimums=tuple(matrix.min(axis=0).tolist()),
        maximums=tuple(matrix.max(axis=0).tolist()),
    )


def normalize(stats, params):
    """Min-max scales each feature with parameters fit on training seasons.

    Constant features map to 0.0. Values outside the fitted range are kept
    as they are, so test seasons can leave [0, 1].
    """
    if not stats:
        return []
    if stats[0].feature_names != params.feature_names:
        raise DataValidationError(
            f"feature mismatch: records have {len(stats[0].feature_names)} features, "
            f"parameters {len(params.feature_names)}"
        )

    matrix = np.array([record.features for record in stats], dtype=float)
    low = np.asarray(params.minimums)
    span = np.asarray(params.maximums) - low
    constant = span == 0.0
    scaled = (matrix - low) / np.where(constant, 1.0, span)
    scaled[:, constant] = 0.0

    return [
        record.model_copy(update={"features": tuple(row.tolist())})
        for record, row in zip(stats, scaled)
    ]


def normalize_season(dataset, params):
    return dataset.model_copy(update={"stats": tuple(normalize(list(dataset.stats), params))})


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


def _check_ordered(seasons, expected_count, what):
    if len(seasons) != expected_count:
        raise DataValidationError(f"{what} needs exactly {expected_count} seasons, got {len(seasons)}")
    ids = [dataset.season_id for dataset in seasons]
    if any(later <= earlier for earlier, later in zip(ids, ids[1:])):
        raise DataValidationError(f"seasons must be strictly increasing, got {ids}")


def temporal_split(seasons):
    """First three seasons train, the fourth (latest) tests."""
    seasons = list(seasons)
    _check_ordered(seasons, 4, "temporal split")
    return seasons[:3], seasons[3]


def cv_folds(train):
    """Three folds over the training seasons, each season validated once."""
    train = list(train)
    _check_ordered(train, 3, "cross-validation")
    first, second, third = train
    return [
        ([first, second], third),
        ([first, third], second),
        ([second, third], first),
    ]


# ---------------------------------------------------------------------------
# Siamese training examples
# ---------------------------------------------------------------------------


def _vectors_for(dataset):
    vectors = dataset.stats_by_team()

    def lookup(team, game):
        try:
            return vectors[team]
        except KeyError:
            raise DataValidationError(f"game {game.season_id}/{game.game_index}: no statistics for {team!r}")

    return lookup


def build_pairs(dataset):
    lookup = _vectors_for(dataset)
    return [
        TrainingPair(
            home=lookup(game.home_team, game),
            away=lookup(game.away_team, game),
            label=0 if game.home_won else 1,
        )
        for game in dataset.games
    ]


def build_triplets(dataset, rng_seed):
    """One triplet per game, anchored on the home team's vector.

    The positive is the home vector of another game with the same outcome,
    the negative the home vector of a game with the opposite outcome, both
    drawn uniformly with a seeded generator.
    """
    lookup = _vectors_for(dataset)
    anchors = [lookup(game.home_team, game) for game in dataset.games]
    labels = np.array([game.home_won for game in dataset.games], dtype=bool)

    by_class = {True: np.flatnonzero(labels), False: np.flatnonzero(~labels)}
    if not by_class[True].size or not by_class[False].size:
        raise DataValidationError(
            f"season {dataset.season_id}: every game has the same outcome, no negatives to sample"
        )

    rng = np.random.default_rng(derive_seed(rng_seed, "triplets", dataset.season_id))
    triplets = []
    for index, label in enumerate(labels):
        same = by_class[bool(label)]
        if same.size > 1:
            same = same[same != index]
        positive = int(same[rng.integers(same.size)])
        others = by_class[not label]
        negative = int(others[rng.integers(others.size)])
        triplets.append(TrainingTriplet(anchor=anchors[index], positive=anchors[positive], negative=anchors[negative]))

    logger.debug(f"👉 Built {len(triplets)} triplets for season {dataset.season_id}")
    return triplets

