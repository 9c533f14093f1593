"""
Main CLI Interface for Team Strength Studio

Command-line interface for inferring week-by-week offensive and defensive
team strengths from match results, forecasting matches and evaluating the
forecasts against Elo, naive and bookmaker baselines.
"""

import difflib
import logging
import math
from contextlib import contextmanager
from dataclasses import replace
from datetime import date
from pathlib import Path
from typing import Any, Dict, List, Optional

import typer
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from .baselines import elo_fit
from .config import Config, RunConfig, setup_logging
from .domain import Schedule
from .errors import ConfigError, UnknownTeamError
from .graph_engine import build_graph, run_bp
from .harness import cumulative_net, make_skeleton, rolling_evaluate, simulate, weekly_net_series
from .ingest import CsvSchema, bucket_weeks, parse_date, parse_fixtures, parse_matches
from .predictor import predict_match, timeline as strength_timeline, wdl
from .storage import (
    load_model,
    prediction_row,
    save_elo_model,
    save_model,
    write_eval_csv,
    write_latents_csv,
    write_matches_csv,
    write_net_series_csv,
    write_posterior_csv,
    write_predictions_csv,
    write_timeline_csv,
    write_trace_csv,
)
from .trainer import make_hyperparams, train as fit_model
from .validator import validate_params

app = typer.Typer(help="Team Strength Studio - latent team strengths from match results")
console = Console()
logger = logging.getLogger(__name__)

ConfigOption = typer.Option(None, "--config", help="JSON file with RunConfig fields")
InputOption = typer.Option(None, "--input", "-i", help="Match CSV (football-data.co.uk columns)")
OutputOption = typer.Option(None, "--output-dir", "-o", help="Directory for output files")
LogOption = typer.Option(None, "--log-level", help="DEBUG, INFO, WARNING or ERROR")
SchemaOption = typer.Option(None, "--schema", help="Column override FIELD=COLUMN, e.g. odds_home=B365H (repeatable)")
StrictOption = typer.Option(None, "--strict/--lenient", help="Abort on the first bad row, or skip bad rows")
GapOption = typer.Option(None, "--season-gap-days", help="Gap that starts a new season")

INGEST_FIELDS = ("season_gap_days", "strict", "schema")


@contextmanager
def _cli_errors():
    """Map failures to exit codes: 2 for configuration/input, 1 for everything else."""
    try:
        yield
    except typer.Exit:
        raise
    except (ConfigError, UnknownTeamError, FileNotFoundError) as e:
        console.print(f"\n[bold red]❌ Error:[/bold red] {e}\n")
        raise typer.Exit(2)
    except Exception as e:
        console.print(f"\n[bold red]❌ Error:[/bold red] {e}\n")
        raise typer.Exit(1)


def _run_config(command: str, config_file: Optional[str], require_input=False, require_model=False, **flags) -> RunConfig:
    run = RunConfig.from_sources(command, config_file, flags).validate(require_input, require_model)
    setup_logging(run.log_level)
    return run


def _schema_overrides(pairs: Optional[List[str]]) -> Optional[Dict[str, str]]:
    if not pairs:
        return None
    overrides = {}
    for pair in pairs:
        name, sep, column = pair.partition("=")
        if not sep or not name.strip() or not column.strip():
            raise ConfigError(f"--schema expects FIELD=COLUMN, got {pair!r}")
        overrides[name.strip()] = column.strip()
    return overrides


def _schema(run: RunConfig) -> CsvSchema:
    try:
        return CsvSchema().with_overrides(run.schema or {})
    except ValueError as e:
        raise ConfigError(str(e))


def _load_schedule(run: RunConfig, goal_cap: Optional[int] = None) -> Schedule:
    text = Path(run.input_path).read_text(encoding="utf-8")
    records = parse_matches(text, _schema(run), goal_cap=goal_cap if goal_cap is not None else run.goal_cap, strict=run.strict)
    return bucket_weeks(records, season_gap_days=run.season_gap_days)


def _lookup_team(schedule: Schedule, name: str) -> int:
    try:
        return schedule.team_id(name)
    except UnknownTeamError:
        near = difflib.get_close_matches(name, list(schedule.team_names.values()), n=3)
        detail = f"did you mean: {', '.join(near)}" if near else "no similar team names"
        raise UnknownTeamError(name, detail)


def _output(run: RunConfig, filename: str) -> Path:
    return Path(run.output_dir) / filename


@app.command()
def ingest(
    input_path: Optional[str] = InputOption,
    output_dir: Optional[str] = OutputOption,
    goal_cap: Optional[int] = typer.Option(None, "--goal-cap", help="Goals above this are capped"),
    season_gap_days: Optional[int] = GapOption,
    strict: Optional[bool] = StrictOption,
    schema: Optional[List[str]] = SchemaOption,
    config_file: Optional[str] = ConfigOption,
    log_level: Optional[str] = LogOption,
):
    """
    Parse a match CSV and write the canonical match file plus its JSON sidecar.
    """
    with _cli_errors():
        run = _run_config("ingest", config_file, require_input=True, input_path=input_path, output_dir=output_dir,
                          goal_cap=goal_cap, season_gap_days=season_gap_days, log_level=log_level,
                          strict=strict, schema=_schema_overrides(schema))
        schedule = _load_schedule(run)
        csv_path, sidecar = write_matches_csv(_output(run, "matches.csv"), schedule)

        table = Table(show_header=True, header_style="bold magenta")
        table.add_column("Matches", justify="right")
        table.add_column("Teams", justify="right")
        table.add_column("Weeks", justify="right")
        table.add_column("Seasons", justify="right")
        table.add_row(str(schedule.num_matches), str(len(schedule.teams)), str(schedule.num_weeks),
                      str(len(schedule.seasons())))
        console.print(table)
        console.print(f"[cyan]📁 Matches:[/cyan] {csv_path}")
        console.print(f"[cyan]📝 Sidecar:[/cyan] {sidecar}\n")


@app.command()
def train(
    input_path: Optional[str] = InputOption,
    output_dir: Optional[str] = OutputOption,
    model_out: Optional[str] = typer.Option(None, "--model-out", help="Model file (default: <output-dir>/model.json)"),
    states: Optional[int] = typer.Option(None, "--states", "-s", help="Number of strength states"),
    goal_cap: Optional[int] = typer.Option(None, "--goal-cap", help="Goals above this are capped"),
    c_transition: Optional[float] = typer.Option(None, "--c-transition", help="Transition pseudocounts per row"),
    c_goal: Optional[float] = typer.Option(None, "--c-goal", help="Emission pseudocounts"),
    restarts: Optional[int] = typer.Option(None, "--restarts", "-r", help="Random restarts"),
    max_iterations: Optional[int] = typer.Option(None, "--max-iterations", help="EM iteration cap"),
    bp_cycles: Optional[int] = typer.Option(None, "--bp-cycles", help="Message passing cycles per E step"),
    tol: Optional[float] = typer.Option(None, "--tol", help="Relative objective change that counts as converged"),
    damping: Optional[float] = typer.Option(None, "--damping", help="Message damping in [0, 1)"),
    threads: Optional[int] = typer.Option(None, "--threads", help="Worker threads for restarts"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Base random seed"),
    season_gap_days: Optional[int] = GapOption,
    strict: Optional[bool] = StrictOption,
    schema: Optional[List[str]] = SchemaOption,
    config_file: Optional[str] = ConfigOption,
    log_level: Optional[str] = LogOption,
):
    """
    Fit the model by EM and write the model file and objective trace.
    """
    with _cli_errors():
        run = _run_config(
            "train", config_file, require_input=True, input_path=input_path, output_dir=output_dir,
            num_strength_states=states, goal_cap=goal_cap, c_transition=c_transition, c_goal=c_goal,
            restarts=restarts, max_iterations=max_iterations, bp_cycles=bp_cycles, convergence_tol=tol,
            damping=damping, threads=threads, seed=seed, season_gap_days=season_gap_days,
            strict=strict, schema=_schema_overrides(schema), log_level=log_level,
        )
        schedule = _load_schedule(run)
        hyper = make_hyperparams(schedule, run.cardinalities(), run.c_transition, run.c_goal)
        config = run.train_config()

        with console.status("[bold green]Running EM..."):
            result = fit_model(schedule, hyper, config)

        model_path = Path(model_out) if model_out else _output(run, "model.json")
        digest = save_model(model_path, result.params, hyper, config, result.trace.best_objective,
                            team_names=schedule.team_names,
                            ingest_settings={name: getattr(run, name) for name in INGEST_FIELDS})
        trace_path = write_trace_csv(_output(run, "trace.csv"), result.trace)

        table = Table(show_header=True, header_style="bold magenta", title="Restarts")
        table.add_column("Restart", justify="right")
        table.add_column("Seed", justify="right")
        table.add_column("Iterations", justify="right")
        table.add_column("Final objective", justify="right")
        table.add_column("Converged", justify="center")
        for r in result.trace.restarts:
            marker = " ★" if r.restart == result.trace.selected else ""
            table.add_row(f"{r.restart}{marker}", str(r.seed), str(len(r.objectives)),
                          f"{r.final_objective:.4f}", "✓" if r.converged else "✗")
        console.print(table)
        console.print(f"\n[bold green]✅ Final objective:[/bold green] {result.trace.best_objective:.6f}")
        console.print(f"[cyan]📁 Model:[/cyan] {model_path} [dim]({digest[:12]})[/dim]")
        console.print(f"[cyan]📝 Trace:[/cyan] {trace_path}\n")


def _posterior_for(run: RunConfig, given: Dict[str, Any]):
    """
    Rebuild the training schedule and run BP with a stored model.

    Ingest settings recorded in the model win over config and environment
    defaults; only flags given on the command line override them.
    """
    stored = load_model(run.model_path)
    recorded = {k: v for k, v in stored.ingest.items() if k in INGEST_FIELDS and given.get(k) is None}
    if recorded:
        logger.debug(f"Using ingest settings recorded in the model: {recorded}")
        run = replace(run, **recorded)
    schedule = _load_schedule(run, goal_cap=stored.card.goal_cap)
    graph = build_graph(schedule, stored.card)
    posterior = run_bp(graph, stored.params, cycles=run.bp_cycles, damping=run.damping)
    return run, stored, schedule, posterior


@app.command()
def infer(
    input_path: Optional[str] = InputOption,
    model_path: Optional[str] = typer.Option(None, "--model", "-m", help="Trained model file"),
    output_dir: Optional[str] = OutputOption,
    bp_cycles: Optional[int] = typer.Option(None, "--bp-cycles", help="Message passing cycles"),
    season_gap_days: Optional[int] = GapOption,
    strict: Optional[bool] = StrictOption,
    schema: Optional[List[str]] = SchemaOption,
    config_file: Optional[str] = ConfigOption,
    log_level: Optional[str] = LogOption,
):
    """
    Run belief propagation with a trained model and write every node marginal.
    """
    with _cli_errors():
        given = dict(season_gap_days=season_gap_days, strict=strict, schema=_schema_overrides(schema))
        run = _run_config("infer", config_file, require_input=True, require_model=True, input_path=input_path,
                          model_path=model_path, output_dir=output_dir, bp_cycles=bp_cycles, log_level=log_level,
                          **given)
        _, _, _, posterior = _posterior_for(run, given)
        path = write_posterior_csv(_output(run, "posterior.csv"), posterior)
        console.print(f"[green]✓[/green] Posterior for {posterior.graph.num_latent_nodes} latent nodes")
        console.print(f"[cyan]📁 Output:[/cyan] {path}\n")


@app.command()
def timeline(
    team: str = typer.Option(..., "--team", "-t", help="Team name as it appears in the match file"),
    role: str = typer.Option("offense", "--role", help="offense or defense"),
    input_path: Optional[str] = InputOption,
    model_path: Optional[str] = typer.Option(None, "--model", "-m", help="Trained model file"),
    output_dir: Optional[str] = OutputOption,
    season_gap_days: Optional[int] = GapOption,
    strict: Optional[bool] = StrictOption,
    schema: Optional[List[str]] = SchemaOption,
    config_file: Optional[str] = ConfigOption,
    log_level: Optional[str] = LogOption,
):
    """
    Export a team's 0-100 strength timeline; weeks between its seasons are left out.
    """
    with _cli_errors():
        if role not in ("offense", "defense"):
            raise ConfigError(f"role must be offense or defense, got {role!r}")
        given = dict(season_gap_days=season_gap_days, strict=strict, schema=_schema_overrides(schema))
        run = _run_config("timeline", config_file, require_input=True, require_model=True, input_path=input_path,
                          model_path=model_path, output_dir=output_dir, log_level=log_level, **given)
        _, _, schedule, posterior = _posterior_for(run, given)
        team_id = _lookup_team(schedule, team)
        points = strength_timeline(team_id, role, posterior)
        safe = "".join(c if c.isalnum() else "_" for c in team)
        path = write_timeline_csv(_output(run, f"timeline_{safe}_{role}.csv"), [(team, role, p) for p in points])
        if points:
            console.print(f"[green]✓[/green] {len(points)} weeks, strength "
                          f"{min(p.strength for p in points):.1f}-{max(p.strength for p in points):.1f}")
        console.print(f"[cyan]📁 Output:[/cyan] {path}\n")


def _target_week(schedule: Schedule, fixture_date: Optional[date], season_gap_days: int):
    """Week id and extra season boundaries for a fixture after the last played week.

    Every full season_gap_days span without matches counts as one more boundary."""
    last_week = schedule.num_weeks
    if fixture_date is None:
        return last_week + 1, set()
    last_date = max(rec.date for rec in schedule.week(last_week))
    days = (fixture_date - schedule.week_date(last_week)).days
    week = last_week + max(1, math.ceil(days / 7))
    spans = min((fixture_date - last_date).days // (season_gap_days + 1), week - last_week)
    return week, set(range(last_week + 1, last_week + 1 + spans))


@app.command()
def predict(
    input_path: Optional[str] = InputOption,
    model_path: Optional[str] = typer.Option(None, "--model", "-m", help="Trained model file"),
    fixtures: Optional[str] = typer.Option(None, "--fixtures", "-f", help="CSV of upcoming fixtures"),
    home: Optional[str] = typer.Option(None, "--home", help="Home team of a single fixture"),
    away: Optional[str] = typer.Option(None, "--away", help="Away team of a single fixture"),
    match_date: Optional[str] = typer.Option(None, "--date", help="Fixture date DD/MM/YY"),
    output_dir: Optional[str] = OutputOption,
    season_gap_days: Optional[int] = GapOption,
    strict: Optional[bool] = StrictOption,
    schema: Optional[List[str]] = SchemaOption,
    config_file: Optional[str] = ConfigOption,
    log_level: Optional[str] = LogOption,
):
    """
    Forecast scorelines and win/draw/loss for upcoming fixtures.
    """
    with _cli_errors():
        given = dict(season_gap_days=season_gap_days, strict=strict, schema=_schema_overrides(schema))
        run = _run_config("predict", config_file, require_input=True, require_model=True, input_path=input_path,
                          model_path=model_path, output_dir=output_dir, log_level=log_level, **given)
        if fixtures:
            if not Path(fixtures).exists():
                raise ConfigError(f"fixtures file not found: {fixtures}")
        elif not (home and away):
            raise ConfigError("give --fixtures or both --home and --away")

        run, stored, schedule, posterior = _posterior_for(run, given)
        if fixtures:
            pending = parse_fixtures(Path(fixtures).read_text(encoding="utf-8"), _schema(run))
        else:
            pending = [(parse_date(match_date) if match_date else None, home, away)]
        rows: List[Dict] = []
        table = Table(show_header=True, header_style="bold magenta")
        for column in ("Home", "Away", "Win", "Draw", "Loss"):
            table.add_column(column, justify="right" if column in ("Win", "Draw", "Loss") else "left")
        for fixture_date, home_name, away_name in pending:
            week, extra = _target_week(schedule, fixture_date, run.season_gap_days)
            dist = predict_match(
                _lookup_team(schedule, home_name), _lookup_team(schedule, away_name), week, posterior,
                stored.params, season_boundaries=set(schedule.season_boundaries) | extra,
            )
            rows.append(prediction_row(fixture_date, home_name, away_name, dist))
            triple = wdl(dist)
            table.add_row(home_name, away_name, f"{triple.p_home_win:.3f}", f"{triple.p_draw:.3f}",
                          f"{triple.p_away_win:.3f}")
        path = write_predictions_csv(_output(run, "predictions.csv"), rows)
        console.print(table)
        console.print(f"[cyan]📁 Output:[/cyan] {path}\n")


def _split_week_of(run: RunConfig, schedule: Schedule) -> int:
    if run.split_week is not None:
        week = run.split_week
    elif run.split_date is not None:
        try:
            split = parse_date(run.split_date)
        except ValueError as e:
            raise ConfigError(str(e))
        later = [w for w in range(1, schedule.num_weeks + 1) if schedule.week_date(w) >= split]
        week = later[0] if later else schedule.num_weeks + 1
    else:
        raise ConfigError("give --split-week or --split-date")
    if not 1 < week <= schedule.num_weeks:
        raise ConfigError(f"split week {week} outside the data (weeks 2..{schedule.num_weeks})")
    return week


@app.command()
def evaluate(
    input_path: Optional[str] = InputOption,
    output_dir: Optional[str] = OutputOption,
    split_week: Optional[int] = typer.Option(None, "--split-week", help="First held-out week"),
    split_date: Optional[str] = typer.Option(None, "--split-date", help="First held-out date DD/MM/YY"),
    weekly_iters: Optional[int] = typer.Option(None, "--weekly-iters", help="EM iterations after each week"),
    states: Optional[int] = typer.Option(None, "--states", "-s", help="Number of strength states"),
    goal_cap: Optional[int] = typer.Option(None, "--goal-cap", help="Goals above this are capped"),
    c_transition: Optional[float] = typer.Option(None, "--c-transition", help="Transition pseudocounts per row"),
    c_goal: Optional[float] = typer.Option(None, "--c-goal", help="Emission pseudocounts"),
    restarts: Optional[int] = typer.Option(None, "--restarts", "-r", help="Random restarts for the initial fit"),
    max_iterations: Optional[int] = typer.Option(None, "--max-iterations", help="EM iteration cap"),
    bp_cycles: Optional[int] = typer.Option(None, "--bp-cycles", help="Message passing cycles per E step"),
    tol: Optional[float] = typer.Option(None, "--tol", help="Relative objective change that counts as converged"),
    damping: Optional[float] = typer.Option(None, "--damping", help="Message damping in [0, 1)"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Base random seed"),
    threads: Optional[int] = typer.Option(None, "--threads", help="Worker threads for restarts"),
    season_gap_days: Optional[int] = GapOption,
    strict: Optional[bool] = StrictOption,
    schema: Optional[List[str]] = SchemaOption,
    config_file: Optional[str] = ConfigOption,
    log_level: Optional[str] = LogOption,
):
    """
    Rolling out-of-sample evaluation against Elo, naive and bookmaker forecasts.
    """
    with _cli_errors():
        run = _run_config(
            "evaluate", config_file, require_input=True, input_path=input_path, output_dir=output_dir,
            split_week=split_week, split_date=split_date, weekly_iters=weekly_iters, num_strength_states=states,
            goal_cap=goal_cap, c_transition=c_transition, c_goal=c_goal, restarts=restarts,
            max_iterations=max_iterations, bp_cycles=bp_cycles, convergence_tol=tol, damping=damping, seed=seed,
            threads=threads, season_gap_days=season_gap_days, strict=strict, schema=_schema_overrides(schema),
            log_level=log_level,
        )
        schedule = _load_schedule(run)
        week = _split_week_of(run, schedule)
        hyper = make_hyperparams(schedule.truncate(week), run.cardinalities(), run.c_transition, run.c_goal)

        with console.status("[bold green]Evaluating week by week..."):
            rows = rolling_evaluate(schedule, hyper, run.train_config(), week, run.weekly_iters)

        eval_path = write_eval_csv(_output(run, "eval.csv"), rows)
        net_path = write_net_series_csv(_output(run, "net_series.csv"), weekly_net_series(rows))
        elo_path = save_elo_model(_output(run, "elo.json"), elo_fit(schedule.truncate(week).records()),
                                  schedule.team_names)

        lines = []
        for baseline in ("naive", "elo", "book"):
            series = cumulative_net(rows, "model", baseline)
            if series:
                lines.append(f"vs {baseline:<5} {series[-1][1]:+.3f} over {len(series)} matches")
            else:
                lines.append(f"vs {baseline:<5} [dim]no data[/dim]")
        console.print(Panel("\n".join(lines), title="[bold]Cumulative net log-likelihood[/bold]", border_style="cyan"))
        console.print(f"[cyan]📁 Rows:[/cyan] {eval_path}")
        console.print(f"[cyan]📈 Net series:[/cyan] {net_path}")
        console.print(f"[cyan]🎯 Elo model:[/cyan] {elo_path}\n")


@app.command("simulate")
def simulate_command(
    model_path: Optional[str] = typer.Option(None, "--model", "-m", help="Model whose parameters generate the data"),
    input_path: Optional[str] = typer.Option(None, "--input", "-i", help="Skeleton match CSV (goals are resampled)"),
    teams: Optional[int] = typer.Option(None, "--teams", help="Round-robin skeleton: number of teams"),
    weeks: Optional[int] = typer.Option(None, "--weeks", help="Round-robin skeleton: number of weeks"),
    season_length: Optional[int] = typer.Option(None, "--season-length", help="Round-robin skeleton: weeks per season"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Random seed"),
    output_dir: Optional[str] = OutputOption,
    schema: Optional[List[str]] = SchemaOption,
    config_file: Optional[str] = ConfigOption,
    log_level: Optional[str] = LogOption,
):
    """
    Sample a synthetic season from a trained model; the output re-ingests as a match file.
    """
    with _cli_errors():
        run = _run_config("simulate", config_file, require_model=True, model_path=model_path, input_path=input_path,
                          seed=seed, output_dir=output_dir, schema=_schema_overrides(schema), log_level=log_level)
        stored = load_model(run.model_path)
        if run.input_path:
            if not Path(run.input_path).exists():
                raise ConfigError(f"input file not found: {run.input_path}")
            skeleton = _load_schedule(run, goal_cap=stored.card.goal_cap)
        elif teams and weeks:
            skeleton = make_skeleton(teams, weeks, season_length, goal_cap=stored.card.goal_cap)
        else:
            raise ConfigError("give a skeleton --input or both --teams and --weeks")

        data = simulate(stored.params, skeleton, seed=run.seed)
        csv_path, _ = write_matches_csv(_output(run, "simulated.csv"), data.schedule)
        latent_path = write_latents_csv(_output(run, "latents.csv"), data)
        console.print(f"[green]✓[/green] Simulated {data.schedule.num_matches} matches over {data.schedule.num_weeks} weeks")
        console.print(f"[cyan]📁 Matches:[/cyan] {csv_path}")
        console.print(f"[cyan]📝 Latent states:[/cyan] {latent_path}\n")


@app.command()
def validate(
    model_path: str = typer.Argument(..., help="Model file to check"),
    log_level: Optional[str] = LogOption,
):
    """
    Check a model file against every parameter invariant.
    """
    with _cli_errors():
        setup_logging(log_level or Config.LOG_LEVEL)
        stored = load_model(model_path)
        problems = validate_params(stored.params)
        if problems:
            console.print(f"\n[bold red]✗ {len(problems)} violation(s)[/bold red]")
            for problem in problems:
                console.print(f"  • {problem}")
            console.print()
            raise typer.Exit(1)
        console.print(f"\n[bold green]✅ {model_path} is valid[/bold green] "
                      f"(S={stored.card.num_strength_states}, G={stored.card.num_goal_states})\n")


def main():
    """Main entry point"""
    app()


if __name__ == "__main__":
    main()
