from __future__ import annotations

import typer
from rich.console import Console
from rich.table import Table

from polyharm_lab.measure_engine import doubling_constants
from polyharm_lab.metric_lab import epsilon_table
from polyharm_lab.sphere_quad import ConstantOverflowError, coefficient_bound, constants

console = Console()


def show_constants(
    n: int = typer.Option(3, "--n", help="Ambient dimension."),
    k: int = typer.Option(1, "--k", help="Degree."),
):
    """Print A, l, B, the doubling constant and the separation constants for (n, k)."""
    try:
        consts = constants(n, k)
        bound = coefficient_bound(n, k)
    except ConstantOverflowError as exc:
        console.print(f"[red]{exc}[/red]")
        raise typer.Exit(1)
    except ValueError as exc:
        console.print(f"[red]{exc}[/red]")
        raise typer.Exit(2)

    table = Table(title=f"n={n}, k={k}")
    table.add_column("constant")
    table.add_column("value", justify="right")
    table.add_row("A (Lipschitz)", f"{consts.A:.6g}")
    table.add_row("l (big piece)", f"{consts.l:.6g}")
    table.add_row("B (reverse Hoelder)", f"{consts.B:.6g}")
    table.add_row("C (doubling)", f"{doubling_constants(n, k).C_nd:.6g}")
    table.add_row("coefficient bound", f"{bound:.6g}")
    console.print(table)

    eps = epsilon_table(n, k)
    rows = Table(title=f"separation constants, d={k}")
    rows.add_column("k", justify="right")
    rows.add_column("log10 eps0", justify="right")
    for row in eps.rows():
        rows.add_row(str(row["k"]), f"{row['log10_eps0']:.4f}")
    console.print(rows)
    console.print(f"log10 eps1 = {eps.log10_eps1:.4f}, log10 eps2 = {eps.log10_eps2:.4f}")
