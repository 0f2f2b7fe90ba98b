from . import constants_cmds, poly_cmds, run_cmds

__all__ = ["constants_cmds", "poly_cmds", "run_cmds"]
