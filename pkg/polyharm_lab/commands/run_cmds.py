from __future__ import annotations

from pathlib import Path
from typing import Optional

import typer
from rich.console import Console

from polyharm_lab.blowup_lab import InconclusiveCountError, SampleError
from polyharm_lab.experiment_config import ConfigError, load_experiment_config
from polyharm_lab.experiments import run_experiment, summary_lines, write_reports
from polyharm_lab.harmonic_poly import PolyError
from polyharm_lab.measure_engine import MeasureError
from polyharm_lab.metric_lab import MetricError, SolverError
from polyharm_lab.particle_measure import ParticleError
from polyharm_lab.roots import RootError
from polyharm_lab.sphere_quad import ConstantOverflowError, QuadratureError

EXIT_OK = 0
EXIT_FAILED_CHECK = 1
EXIT_SCHEMA = 2
EXIT_IO = 3

console = Console()


def run(
    config: Path = typer.Option(..., "--config", "-c", help="Experiment config (JSON)."),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Report directory."),
    seed: Optional[int] = typer.Option(None, "--seed", min=0, help="Overrides the config seed."),
    threads: Optional[int] = typer.Option(None, "--threads", min=1, help="Worker threads."),
):
    """
    Run one experiment command and write its CSV/JSON reports.

    Exit codes: 0 all checks passed, 1 a check failed or was inconclusive,
    2 invalid config, 3 file I/O error.
    """
    try:
        cfg = load_experiment_config(config, seed=seed, threads=threads, out=out)
    except ConfigError as exc:
        console.print("[red]Invalid experiment config:[/red]")
        for line in exc.diagnostics or [str(exc)]:
            console.print(f"  - {line}")
        raise typer.Exit(EXIT_SCHEMA)
    except OSError as exc:
        console.print(f"[red]Cannot read config {config}: {exc}[/red]")
        raise typer.Exit(EXIT_IO)

    console.print(f"Running [bold]{cfg.command}[/bold] (seed={cfg.seed}, threads={cfg.threads})")
    try:
        result = run_experiment(cfg)
    except InconclusiveCountError as exc:
        console.print(f"[yellow]{cfg.command} was inconclusive: {exc}[/yellow]")
        raise typer.Exit(EXIT_FAILED_CHECK)
    except (
        PolyError,
        MeasureError,
        ParticleError,
        MetricError,
        SampleError,
        RootError,
        ConstantOverflowError,
    ) as exc:
        console.print(f"[red]{cfg.command} rejected its input: {exc}[/red]")
        raise typer.Exit(EXIT_SCHEMA)
    except (QuadratureError, SolverError) as exc:
        console.print(f"[red]{cfg.command} failed a numerical check: {exc}[/red]")
        raise typer.Exit(EXIT_FAILED_CHECK)
    except OSError as exc:
        console.print(f"[red]{cfg.command} could not write its output: {exc}[/red]")
        raise typer.Exit(EXIT_IO)

    try:
        written = write_reports(result, cfg)
    except OSError as exc:
        console.print(f"[red]Cannot write reports: {exc}[/red]")
        raise typer.Exit(EXIT_IO)

    for line in summary_lines(result):
        console.print(f"  {line}")
    for path in written:
        console.print(f"[green]Wrote[/green] {path}")
    if not result.ok:
        console.print(f"[yellow]{cfg.command}: a check failed or was inconclusive.[/yellow]")
        raise typer.Exit(EXIT_FAILED_CHECK)
    console.print(f"[green]✓ {cfg.command} passed[/green]")
