import json
import logging
from pathlib import Path
from typing import List, Optional

import typer
import yaml
from rich.console import Console
from rich.table import Table

from app.core.config import settings
from app.core.logging_config import configure_logging
from app.models.experiment import ExperimentConfig
from app.services.candidate_service import (
    UNKNOWN_INSTANCE,
    dump_success_matrix,
    load_success_matrix,
    success_matrix,
    train_population,
)
from app.services.harness_service import (
    EVALUATION_TAG,
    POPULATION_TAG,
    builtin_skews,
    resolve_master_seed,
    resolve_skew,
    run_experiment,
    seed_rng,
    validate_skew,
)
from app.services.report_service import emit_report, load_report, parse_formats

logger = logging.getLogger(__name__)

app = typer.Typer(help="Type-confounding rectification experiments.", no_args_is_help=True)
console = Console()

ConfigOption = typer.Option(None, "--config", help="Experiment config (JSON or YAML)")
SeedOption = typer.Option(None, "--seed", min=0, help="Master seed; overrides CTCAT_SEED and the config file")
OutOption = typer.Option(None, "--out", help="Output directory")
FormatOption = typer.Option("csv,json", "--format", help="Comma-separated: csv, json, svg")


def load_config(path: Optional[Path]) -> ExperimentConfig:
    """Read an ExperimentConfig from JSON or YAML; defaults when no path is given."""
    if path is None:
        return ExperimentConfig()
    try:
        payload = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ValueError(f"Failed to read config {path}: {e}") from e
    return ExperimentConfig.model_validate(payload)


def _fail(e: Exception) -> None:
    typer.echo(json.dumps({"error": type(e).__name__, "message": str(e)}), err=True)
    raise typer.Exit(code=1)


def _out_dir(out: Optional[Path], config: Optional[ExperimentConfig] = None) -> Path:
    if out is not None:
        return out
    if config is not None and config.output_dir is not None:
        return config.output_dir
    return settings.OUTPUT_DIR


def _run(config: ExperimentConfig, seed: Optional[int], out: Optional[Path], formats: str) -> None:
    formats = parse_formats(formats)
    report = run_experiment(config, resolve_master_seed(seed, config))
    written = emit_report(report, formats, _out_dir(out, config))
    for path in written:
        typer.echo(str(path))
    if report.errors:
        logger.warning(f"{len(report.errors)} unit(s) failed; see the JSON report")


@app.callback()
def main(log_level: Optional[str] = typer.Option(None, "--log-level", help="Overrides CTCAT_LOG_LEVEL")):
    configure_logging(log_level)


@app.command("run-bandit")
def run_bandit(
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out: Optional[Path] = OutOption,
    format: str = FormatOption,
    scenario: Optional[str] = typer.Option(None, "--scenario", help="kidney, magazine or a scenario file"),
):
    """Train learners on a kidney, magazine or custom contingency table."""
    try:
        cfg = load_config(config)
        if scenario is not None:
            cfg = cfg.model_copy(update={"scenario": scenario})
        if cfg.is_predprey:
            raise ValueError(f"scenario '{cfg.scenario}' belongs to run-predprey")
        _run(cfg, seed, out, format)
    except typer.Exit:
        raise
    except Exception as e:
        _fail(e)


@app.command("run-predprey")
def run_predprey(
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out: Optional[Path] = OutOption,
    format: str = FormatOption,
    fullsim: bool = typer.Option(False, "--fullsim", help="Roll out trained policies instead of drawing from the success matrix"),
):
    """Skewed-buffer selection experiment on the predator-prey task."""
    try:
        cfg = load_config(config)
        if fullsim:
            cfg = cfg.model_copy(update={"scenario": "predprey-fullsim"})
        elif not cfg.is_predprey:
            cfg = cfg.model_copy(update={"scenario": "predprey-synthetic"})
        _run(cfg, seed, out, format)
    except typer.Exit:
        raise
    except Exception as e:
        _fail(e)


@app.command("train-candidates")
def train_candidates(
    config: Optional[Path] = ConfigOption,
    seed: Optional[int] = SeedOption,
    out: Optional[Path] = OutOption,
    episodes: int = typer.Option(100, "--episodes", min=1, help="Evaluation episodes per run"),
    runs: int = typer.Option(10, "--runs", min=1, help="Independent evaluation runs per pair"),
):
    """Train instance and candidate policies and write their success matrix."""
    try:
        cfg = load_config(config)
        master_seed = resolve_master_seed(seed, cfg)
        instances, candidates = train_population(cfg.grid, cfg.train, seed_rng(master_seed, POPULATION_TAG))
        matrix = success_matrix(instances, candidates, episodes, seed_rng(master_seed, EVALUATION_TAG), runs)

        table = Table(title="Success rates")
        table.add_column("instance")
        for arm in matrix.arm_names:
            table.add_column(arm, justify="right")
        for name, row, spread in zip(matrix.instance_names, matrix.rates, matrix.spreads):
            table.add_row(name, *[f"{r:.2f}±{s:.2f}" for r, s in zip(row, spread)])
        console.print(table)

        target = _out_dir(out, cfg)
        target.mkdir(parents=True, exist_ok=True)
        path = target / "success_matrix.csv"
        path.write_text(dump_success_matrix(matrix))
        typer.echo(str(path))
    except typer.Exit:
        raise
    except Exception as e:
        _fail(e)


@app.command("validate-skew")
def validate_skew_command(
    config: Optional[Path] = ConfigOption,
    matrix: Optional[Path] = typer.Option(None, "--matrix", help="Success matrix CSV (defaults to the bundled one)"),
    skew: Optional[List[str]] = typer.Option(None, "--skew", help="Preset name or skew JSON; repeatable"),
):
    """Check that each skew makes its target arm the confounded argmax."""
    try:
        cfg = load_config(config)
        m = load_success_matrix(matrix or cfg.success_matrix_file or settings.SUCCESS_MATRIX_FILE)
        training = [name for name in m.instance_names if name != UNKNOWN_INSTANCE]
        names = skew or [s.name for s in builtin_skews(training, m.arm_names)]
        reports = [validate_skew(m, resolve_skew(name, training, m.arm_names)) for name in names]
        typer.echo(json.dumps([r.model_dump() for r in reports], indent=2))
    except typer.Exit:
        raise
    except Exception as e:
        _fail(e)


@app.command("report")
def report(
    input: Path = typer.Argument(..., help="report.json written by a run"),
    out: Optional[Path] = OutOption,
    format: str = typer.Option("csv,svg", "--format", help="Comma-separated: csv, json, svg"),
):
    """Re-emit a saved JSON report in other formats."""
    try:
        saved = load_report(input)
        for path in emit_report(saved, format, out or input.parent):
            typer.echo(str(path))
    except typer.Exit:
        raise
    except Exception as e:
        _fail(e)


if __name__ == "__main__":
    app()
