"""Command-line entry point: ``python -m season_ranker <command>``.

Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""
import argparse
import json
import os
import sys

from pydantic import ValidationError

from season_ranker.data.ingest import (
    LeagueConfig,
    Schema,
    Sport,
    league_file_paths,
    load_league,
    read_conferences_csv,
    temporal_split,
    write_conferences_csv,
    write_games_csv,
    write_stats_csv,
)
from season_ranker.data.ingest import write_standings_csv as write_order_csv
from season_ranker.data.synthetic import SyntheticLeagueSpec, generate_synthetic_league, write_synthetic_league
from season_ranker.models.siamese import write_training_log
from season_ranker.pipeline.experiment import (
    ExperimentConfig,
    ModelKey,
    actual_standings,
    fit_model,
    load_fitted_model,
    load_seasons,
    rank_season,
    run_experiment,
    save_fitted_model,
    stage,
    tune_hyperparameters,
)
from season_ranker.pipeline.report import ReportFormat, emit_report, render_text, write_standings_files
from season_ranker.ranking.metrics import evaluate_standings
from season_ranker.ranking.ranker import (
    BaselineKind,
    naive_baseline,
    randomized_baseline,
    read_standings_csv,
    write_standings_csv,
)
from season_ranker.utils.errors import DataValidationError, SeasonRankerError
from season_ranker.utils.logging_config import LOG_DIR, configure_logging, logger
from season_ranker.utils.utils import read_yaml

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _emit(payload):
    print(json.dumps(payload, sort_keys=True, indent=2))


def _split(config):
    with stage("ingest"):
        seasons = load_seasons(config)
    with stage("split"):
        return temporal_split(seasons)


def _model_dir(config, model):
    return os.path.join(config.output_dir, "models", ModelKey(model).value)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_ingest(args):
    """Validates a league directory and optionally rewrites it in canonical form."""
    seasons = load_league(args.input, args.sport, conferences_path=args.conferences)
    summary = [
        {"season": s.season_id, "teams": len(s.stats), "games": len(s.games), "features": len(s.feature_names)}
        for s in seasons
    ]
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        sport = Sport(args.sport)
        for dataset in seasons:
            paths = league_file_paths(args.out, sport, dataset.season_id)
            write_stats_csv(list(dataset.stats), paths["stats"], Schema.stats_for(sport))
            write_games_csv(list(dataset.games), paths["games"])
            write_order_csv(actual_standings(dataset).team_ids, paths["standings"])
        if sport is Sport.BASKETBALL:
            conferences = dict(seasons[0].league.conferences)
            write_conferences_csv(conferences, os.path.join(args.out, f"{sport.value}_conferences.csv"))
        logger.info(f"✅ Canonical league files written to {args.out}")
    _emit({"sport": args.sport, "seasons": summary})
    return EXIT_OK


def cmd_train(args):
    config = ExperimentConfig.from_yaml(args.config)
    train_seasons, _ = _split(config)
    models = [ModelKey(m) for m in args.model] if args.model else list(config.models)
    saved = {}
    for model in models:
        with stage(f"train:{model.value}"):
            fitted = fit_model(model, train_seasons, config, config.rng_seed)
            directory = save_fitted_model(fitted, _model_dir(config, model))
            if fitted.siamese is not None:
                write_training_log(os.path.join(directory, "training_log.csv"), fitted.siamese)
        saved[model.value] = directory
    _emit({"trained": saved})
    return EXIT_OK


def cmd_rank(args):
    config = ExperimentConfig.from_yaml(args.config)
    _, test = _split(config)
    with stage(f"rank:{args.model}"):
        fitted = load_fitted_model(_model_dir(config, args.model))
        _, standings = rank_season(fitted, test, config.use_actual_winners)
    directory = os.path.join(config.output_dir, "standings")
    os.makedirs(directory, exist_ok=True)
    path = write_standings_csv(standings, os.path.join(directory, f"{fitted.model.value}.csv"))
    _emit({"model": fitted.model.value, "season": test.season_id, "standings": path, "order": standings.team_ids})
    return EXIT_OK


def _league_for(order, sport, conferences_path, k, cutoff):
    sport = Sport(sport)
    if sport is Sport.RUGBY:
        size = len(order)
        league = LeagueConfig(
            sport=sport, conference_size=size, metric_cutoff_k=min(k, size), playoff_cutoff=min(cutoff, size)
        )
        return league.with_teams(order)
    if not conferences_path:
        raise DataValidationError("basketball evaluation needs --conferences")
    conferences = read_conferences_csv(conferences_path)
    conferences = {team: conferences[team] for team in order if team in conferences}
    size = len(order) // 2
    return LeagueConfig(
        sport=sport,
        conferences=conferences,
        conference_size=size,
        metric_cutoff_k=min(k, size),
        playoff_cutoff=min(cutoff, size),
    )


def cmd_evaluate(args):
    predicted = read_standings_csv(args.predicted, tag="predicted")
    actual = read_standings_csv(args.actual, tag="actual")
    league = _league_for(actual.team_ids, args.league, args.conferences, args.k, args.playoff_cutoff)
    evaluation = evaluate_standings(predicted, actual, league, args.ndcg_scope)
    _emit(evaluation.model_dump())
    return EXIT_OK


def cmd_baseline(args):
    config = ExperimentConfig.from_yaml(args.config)
    train_seasons, test = _split(config)
    seed = config.rng_seed if args.seed is None else args.seed
    directory = os.path.join(config.output_dir, "baselines")
    os.makedirs(directory, exist_ok=True)

    if BaselineKind(args.kind) is BaselineKind.NAIVE:
        standings = [naive_baseline(actual_standings(train_seasons[-1]), teams=test.team_ids)]
    else:
        standings = randomized_baseline(test.team_ids, args.trials or config.baseline_trials, seed)

    actual = actual_standings(test)
    written, evaluations = [], []
    for entry in standings:
        written.append(write_standings_csv(entry, os.path.join(directory, f"{entry.tag}.csv")))
        evaluations.append(evaluate_standings(entry, actual, test.league, config.ndcg_scope).model_dump())
    _emit({"kind": args.kind, "seed": seed, "files": written, "evaluations": evaluations})
    return EXIT_OK


def cmd_synth(args):
    spec = SyntheticLeagueSpec.model_validate(read_yaml(args.spec) if args.spec else {})
    league = generate_synthetic_league(spec)
    written = write_synthetic_league(league, args.out)
    _emit({"files": written, "strength_order": [list(league.strength_order(i)) for i in range(spec.seasons)]})
    return EXIT_OK


def cmd_report(args):
    config = ExperimentConfig.from_yaml(args.config)
    report = run_experiment(config)
    formats = [ReportFormat(f) for f in args.format] if args.format else list(config.report.formats)
    for fmt in formats:
        emit_report(report, fmt, config.output_dir)
    write_standings_files(report, config.output_dir)
    print(render_text(report))
    return EXIT_OK


def cmd_tune(args):
    config = ExperimentConfig.from_yaml(args.config)
    train_seasons, _ = _split(config)
    with stage("tune"):
        result = tune_hyperparameters(train_seasons, config.tune_grid, config.rng_seed, config)
    _emit({"chosen": result.point, "scores": [{"point": p, "mean_ndcg": s} for p, s in result.scores]})
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser and error mapping
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="season_ranker", description="Season standings from per-game rankers")
    parser.add_argument("--log-level", default="INFO", help="Logging level (DEBUG shows per-round boosting lines)")
    parser.add_argument("--log-dir", default=LOG_DIR, help="Directory for the rotating log file")
    commands = parser.add_subparsers(dest="command", required=True)

    ingest = commands.add_parser("ingest", help="Validate a league directory")
    ingest.add_argument("--sport", required=True, choices=[s.value for s in Sport])
    ingest.add_argument("--input", required=True, help="Directory of <sport>_<season>.csv and games files")
    ingest.add_argument("--out", help="Rewrite the validated files here")
    ingest.add_argument("--conferences", help="Conference file (basketball); defaults to the input directory's")
    ingest.set_defaults(handler=cmd_ingest)

    train = commands.add_parser("train", help="Fit models on the three training seasons")
    train.add_argument("--config", help="YAML config merged over the defaults")
    train.add_argument("--model", action="append", choices=[m.value for m in ModelKey])
    train.set_defaults(handler=cmd_train)

    rank = commands.add_parser("rank", help="Rank the test season with a trained model")
    rank.add_argument("--model", required=True, choices=[m.value for m in ModelKey])
    rank.add_argument("--config", help="YAML config merged over the defaults")
    rank.set_defaults(handler=cmd_rank)

    evaluate = commands.add_parser("evaluate", help="Score a predicted standings file against the actual one")
    evaluate.add_argument("--predicted", required=True)
    evaluate.add_argument("--actual", required=True)
    evaluate.add_argument("--league", required=True, choices=[s.value for s in Sport])
    evaluate.add_argument("--conferences", help="Conference file, required for basketball")
    evaluate.add_argument("--k", type=int, default=15, help="AP cutoff")
    evaluate.add_argument("--playoff-cutoff", dest="playoff_cutoff", type=int, default=8)
    evaluate.add_argument("--ndcg-scope", dest="ndcg_scope", default="conference", choices=["conference", "league"])
    evaluate.set_defaults(handler=cmd_evaluate)

    baseline = commands.add_parser("baseline", help="Naive or randomized baseline standings")
    baseline.add_argument("--kind", required=True, choices=[k.value for k in BaselineKind])
    baseline.add_argument("--seed", type=int)
    baseline.add_argument("--trials", type=int)
    baseline.add_argument("--config", help="YAML config merged over the defaults")
    baseline.set_defaults(handler=cmd_baseline)

    synth = commands.add_parser("synth", help="Generate a synthetic league")
    synth.add_argument("--spec", help="YAML file of SyntheticLeagueSpec fields")
    synth.add_argument("--out", required=True)
    synth.set_defaults(handler=cmd_synth)

    report = commands.add_parser("report", help="Run the full experiment and write the results tables")
    report.add_argument("--config", help="YAML config merged over the defaults")
    report.add_argument("--format", action="append", choices=[f.value for f in ReportFormat])
    report.set_defaults(handler=cmd_report)

    tune = commands.add_parser("tune", help="Cross-validated grid search on the training seasons")
    tune.add_argument("--config", help="YAML config merged over the defaults")
    tune.set_defaults(handler=cmd_tune)
    return parser


def handle_error(error):
    """Prints the structured error and returns the exit code."""
    if isinstance(error, SeasonRankerError):
        payload, code = error.to_dict(), error.exit_code
    elif isinstance(error, (ValidationError, FileNotFoundError, ValueError)):
        payload, code = {"error": "Validation Error", "message": str(error)}, EXIT_VALIDATION
    else:
        payload, code = {"error": "Runtime Error", "message": str(error)}, EXIT_RUNTIME

    logger.error(f"❌ {payload['error']}: {payload['message']}")
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level, args.log_dir)
    try:
        return args.handler(args)
    except Exception as e:
        return handle_error(e)
