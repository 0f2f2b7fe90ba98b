from __future__ import annotations

import json
from typing import Optional

import typer
from rich.console import Console
from rich.table import Table

from polyharm_lab.harmonic_poly import (
    Poly,
    PolyError,
    harmonic_basis,
    homogeneous_decompose,
    is_harmonic,
    laplacian,
    lewy_polynomial,
    load_polynomial,
    poly_hash,
)

console = Console()
app = typer.Typer(help="Inspect polynomials.", invoke_without_command=True)


@app.callback()
def poly_root(ctx: typer.Context):
    if ctx.invoked_subcommand is None:
        console.print(ctx.get_help())
        raise typer.Exit()


def _load(text: str, dim: Optional[int]) -> Poly:
    if text.strip().lower() == "lewy":
        return lewy_polynomial()
    try:
        return load_polynomial(text, dim)
    except PolyError as exc:
        console.print(f"[red]{exc}[/red]")
        raise typer.Exit(2)


@app.command()
def show(
    polynomial: str = typer.Argument(..., help="Text like 'x*y + x', JSON, or 'lewy'."),
    dim: Optional[int] = typer.Option(None, "--dim", "-n", help="Ambient dimension."),
    as_json: bool = typer.Option(False, "--json", help="Print the canonical JSON form."),
):
    """Print a polynomial with its degree, dimension and harmonicity."""
    p = _load(polynomial, dim)
    if as_json:
        console.print_json(json.dumps(p.to_json()))
        return
    console.print(f"[bold]{p}[/bold]")
    console.print(f"dim={p.dim} degree={p.degree} hash={poly_hash(p)}")
    colour = "green" if is_harmonic(p) else "yellow"
    console.print(f"[{colour}]harmonic: {is_harmonic(p)}[/{colour}]")


@app.command(name="laplacian")
def laplacian_cmd(
    polynomial: str = typer.Argument(...),
    dim: Optional[int] = typer.Option(None, "--dim", "-n"),
):
    """Print the Laplacian of a polynomial."""
    console.print(str(laplacian(_load(polynomial, dim))))


@app.command()
def decompose(
    polynomial: str = typer.Argument(...),
    dim: Optional[int] = typer.Option(None, "--dim", "-n"),
):
    """Split a polynomial into homogeneous parts."""
    p = _load(polynomial, dim)
    try:
        decomp = homogeneous_decompose(p)
    except PolyError as exc:
        console.print(f"[red]{exc}[/red]")
        raise typer.Exit(2)
    table = Table(title=f"d={decomp.top_degree}, j={decomp.bottom_degree}")
    table.add_column("degree", justify="right")
    table.add_column("part")
    table.add_column("harmonic")
    for degree, part in decomp.parts.items():
        table.add_row(str(degree), str(part), str(is_harmonic(part)))
    console.print(table)


@app.command()
def basis(
    n: int = typer.Option(3, "--n", help="Ambient dimension."),
    k: int = typer.Option(..., "--k", help="Degree."),
):
    """List a basis of homogeneous harmonic polynomials of degree k."""
    try:
        elements = harmonic_basis(n, k)
    except PolyError as exc:
        console.print(f"[red]{exc}[/red]")
        raise typer.Exit(2)
    console.print(f"[bold]{len(elements)}[/bold] basis polynomials (n={n}, k={k})")
    for i, element in enumerate(elements):
        console.print(f"  {i}: {element}")
