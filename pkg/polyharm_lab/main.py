import typer
from rich.console import Console

from polyharm_lab.commands import constants_cmds, poly_cmds, run_cmds
from polyharm_lab.logger_config import create_logger

app = typer.Typer(invoke_without_command=True)
app.add_typer(poly_cmds.app, name="poly")
app.command(name="run")(run_cmds.run)
app.command(name="constants")(constants_cmds.show_constants)

console = Console()


@app.callback()
def main_callback(ctx: typer.Context):
    """
    Main callback to initialize the logger before any subcommand.
    """
    create_logger()
    if ctx.invoked_subcommand is None:
        console.print(ctx.get_help())


def run():
    """
    The run function that calls typer to handle CLI arguments.
    """
    app()


if __name__ == "__main__":
    run()
