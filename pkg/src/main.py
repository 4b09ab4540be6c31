"""Command-line entry point: ``bjs <experiment>`` and ``bjs report``"""
import logging
import sys
from collections.abc import Callable
from pathlib import Path
from typing import Any

import click
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table

from src import __version__
from src.config import ExperimentConfig, Settings, default_config, load_config
from src.models import BJSError, ConfigError
from src.tools.experiments import ExperimentRecord, emit_report, render_saved_report, run_experiment

logger = logging.getLogger(__name__)
console = Console()

CHECKPOINT_DIR = "checkpoints"


class Context:
    """Options shared by every subcommand"""

    def __init__(self, config_path: str | None, out_dir: str | None, threads: int | None, resume: bool = False):
        self.settings = Settings.load()
        self.config_path = config_path
        self.out_dir = out_dir
        self.threads = threads or self.settings.threads
        self.resume = resume

    def config_for(self, name: str) -> ExperimentConfig:
        if self.config_path is None:
            return default_config(name)
        config = load_config(self.config_path)
        if config.name != name:
            raise ConfigError(f"{self.config_path} describes '{config.name}', not '{name}'")
        return config

    def output_dir(self, config: ExperimentConfig) -> Path:
        if self.out_dir is not None:
            return Path(self.out_dir)
        if self.config_path is not None:
            return Path(config.experiment.out_dir)
        return Path(self.settings.out_dir)


def _fail(error: BJSError) -> None:
    console.print(Panel.fit(f"[red]{error}[/red]", title=type(error).__name__, border_style="red"))
    logger.debug("Run failed", exc_info=True)
    sys.exit(1)


def _print_record(record: ExperimentRecord, artifacts: list[Path]) -> None:
    table = Table(title=f"{record.name} ({len(record.rows)} reps, {record.wall_clock:.1f}s)")
    for column in ("quantity", "mean", "stderr", "95% CI"):
        table.add_column(column)
    for name, aggregate in record.aggregates.items():
        table.add_row(name, f"{aggregate.mean:.6g}", f"{aggregate.stderr:.3g}",
                      f"[{aggregate.ci_low:.4g}, {aggregate.ci_high:.4g}]")
    console.print(table)
    for flag in record.summary.flags:
        console.print(f"[yellow]! {flag}[/yellow]")
    console.print(f"[green]✓ {len(artifacts)} artifacts written[/green]")


def execute(ctx: Context, name: str, overrides: dict[str, dict[str, Any]]) -> ExperimentRecord:
    """Apply command-line overrides, run the experiment and emit its report."""
    try:
        config = ctx.config_for(name)
        for section, values in overrides.items():
            config = config.with_updates(section, **values)
        out_dir = ctx.output_dir(config)
        record = run_experiment(config, ctx.threads, checkpoint_dir=out_dir / CHECKPOINT_DIR, resume=ctx.resume)
        artifacts = emit_report(record, out_dir, ctx.settings.template_path)
    except BJSError as e:
        _fail(e)
    _print_record(record, artifacts)
    return record


def _experiment_options(function: Callable) -> Callable:
    """Options every experiment accepts: replicate count, seed and noise spectrum."""
    for option in reversed(
        (
            click.option("--theta", default=None, help="Burgers mean, or a comma list for burgers"),
            click.option("--reps", type=int, default=None, help="Number of replicates"),
            click.option("--seed", type=int, default=None, help="Seed of replicate 0"),
            click.option("--lambda", "mode_weights", default=None, help="Comma list of mode weights"),
            click.option("--n", "n_space", type=int, default=None, help="Grid points on the torus"),
            click.option("--dt", type=float, default=None, help="Time step"),
        )
    ):
        function = option(function)
    return function


def _overrides(common: dict[str, Any], **run: Any) -> dict[str, dict[str, Any]]:
    return {
        "experiment": {"reps": common["reps"]},
        "noise": {"seed": common["seed"], "lambda": common["mode_weights"]},
        "grid": {"n_space": common["n_space"], "dt": common["dt"]},
        "run": {"thetas": common["theta"], **run},
    }


@click.group()
@click.version_option(__version__, prog_name="bjs")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="Experiment INI file")
@click.option("--out", "out_dir", default=None, help="Output directory")
@click.option("--threads", type=int, default=None, help="Worker processes (default BJS_THREADS)")
@click.option("--resume", is_flag=True, help="Reuse replicates already dumped under <out>/checkpoints")
@click.option("-v", "--verbose", is_flag=True, help="Debug logging")
@click.pass_context
def cli(ctx: click.Context, config_path: str | None, out_dir: str | None, threads: int | None, resume: bool,
        verbose: bool):
    """Stochastic Burgers and polymer experiments on the torus"""
    settings = Settings.load()
    logging.basicConfig(
        level=logging.DEBUG if verbose else settings.log_level,
        format="%(message)s",
        handlers=[RichHandler(rich_tracebacks=True, console=Console(stderr=True))],
        force=True,
    )
    ctx.obj = Context(config_path, out_dir, threads, resume)


@cli.command()
@_experiment_options
@click.option("--T", "horizon", type=float, default=None, help="Horizon of the flat start")
@click.pass_obj
def burgers(ctx: Context, horizon: float | None, **common: Any):
    """Burgers profiles from flat data and their mean and moments"""
    execute(ctx, "burgers", _overrides(common, T=horizon))


@cli.command()
@_experiment_options
@click.option("--T1-list", "horizons", default=None, help="Comma list of short horizons")
@click.option("--T2", "reference", type=float, default=None, help="Reference horizon")
@click.pass_obj
def ofos(ctx: Context, horizons: str | None, reference: float | None, **common: Any):
    """Sup-norm gap between horizons T1 and T2 with a fitted decay rate"""
    execute(ctx, "ofos", _overrides(common, horizons=horizons, T_proxy=reference))


@cli.command()
@_experiment_options
@click.option("--eps", default=None, help="Comma list of finite-difference steps")
@click.option("--T", "horizon", type=float, default=None)
@click.pass_obj
def identity(ctx: Context, eps: str | None, horizon: float | None, **common: Any):
    """Difference quotient in theta against the Fokker-Planck density"""
    execute(ctx, "identity", _overrides(common, eps=eps, T=horizon))


@cli.command()
@_experiment_options
@click.option("--smax", "s_max", type=float, default=None, help="Truncation of the time integral")
@click.option("--Tproxy", "T_proxy", type=float, default=None, help="Horizon standing in for infinity")
@click.pass_obj
def gtilde(ctx: Context, s_max: float | None, T_proxy: float | None, **common: Any):
    """Explicit formula for the stationary density against direct evolution"""
    execute(ctx, "gtilde", _overrides(common, s_max=s_max, T_proxy=T_proxy))


@cli.command()
@_experiment_options
@click.option("--x", type=float, default=None, help="Polymer start point")
@click.option("--s-list", default=None, help="Comma list of backward times of the mid-point (default T/4, T/2, T)")
@click.option("--T", "horizon", type=float, default=None)
@click.option("--n-paths", type=int, default=None)
@click.pass_obj
def midpoint(ctx: Context, x: float | None, s_list: str | None, horizon: float | None, n_paths: int | None,
             **common: Any):
    """Mid-point density against sampled polymer paths"""
    execute(ctx, "midpoint", _overrides(common, x=x, s_list=s_list, T=horizon, n_paths=n_paths))


@cli.command()
@_experiment_options
@click.option("--x", type=float, default=None)
@click.option("--s", type=float, default=None)
@click.option("--T1-list", "horizons", default=None)
@click.option("--T2", "reference", type=float, default=None)
@click.pass_obj
def mixing(ctx: Context, x: float | None, s: float | None, horizons: str | None, reference: float | None,
           **common: Any):
    """L1 mixing of the mid-point density in the horizon"""
    execute(ctx, "mixing", _overrides(common, x=x, s=s, horizons=horizons, T_proxy=reference))


@cli.command()
@_experiment_options
@click.option("--T-list", "horizons", default=None, help="Comma list of horizons")
@click.pass_obj
def forgetting(ctx: Context, horizons: str | None, **common: Any):
    """Fokker-Planck forgetting of the initial density"""
    execute(ctx, "forgetting", _overrides(common, horizons=horizons))


@cli.command()
@_experiment_options
@click.option("--t-list", default=None, help="Comma list of observation times")
@click.option("--observables", default=None, help="Comma list of observable names")
@click.option("--Tg", "T", type=float, default=None, help="Horizon of the weight density")
@click.option("--Twarm", "T_warm", type=float, default=None)
@click.option("--n-paths", type=int, default=None)
@click.pass_obj
def envtest(ctx: Context, t_list: str | None, observables: str | None, T: float | None, T_warm: float | None,
            n_paths: int | None, **common: Any):
    """Invariance and convergence of the environment seen from the particle"""
    execute(ctx, "envtest", _overrides(common, t_list=t_list, observables=observables, T=T, T_warm=T_warm,
                                        n_paths=n_paths))


@cli.command()
@_experiment_options
@click.option("--x-list", default=None, help="Comma list of evaluation points")
@click.option("--T", "horizon", type=float, default=None)
@click.option("--n-bridge", type=int, default=None, help="Bridge-law samples")
@click.pass_obj
def whitelaw(ctx: Context, x_list: str | None, horizon: float | None, n_bridge: int | None, **common: Any):
    """White-noise winding increments against the Brownian-bridge law"""
    overrides = _overrides(common, x_list=x_list, T=horizon, n_bridge=n_bridge)
    overrides["noise"]["white"] = True
    execute(ctx, "whitelaw", overrides)


@cli.command()
@click.argument("name")
@click.pass_obj
def report(ctx: Context, name: str):
    """Re-render the markdown report of a finished run"""
    out_dir = Path(ctx.out_dir or ctx.settings.out_dir)
    try:
        path = render_saved_report(out_dir, name, ctx.settings.template_path)
    except BJSError as e:
        _fail(e)
    except FileNotFoundError as e:
        _fail(ConfigError(f"No finished run of '{name}' under {out_dir}: {e.filename}"))
    console.print(f"[green]✓ Report written: {path}[/green]")


if __name__ == "__main__":
    cli()
