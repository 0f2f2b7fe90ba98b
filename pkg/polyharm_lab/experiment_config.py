"""Experiment configuration: JSON files with one section per command, layered over
the package defaults and overridden by CLI flags."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from polyharm_lab.config_loader import ConfigLoader, deep_merge
from polyharm_lab.harmonic_poly import Poly, PolyError, lewy_polynomial, load_polynomial

COMMANDS = (
    "verify-ball-mass",
    "verify-sphere-bounds",
    "doubling-scan",
    "cone-distance",
    "blowup",
    "lewy-demo",
    "fr-metric",
)
STOCHASTIC_COMMANDS = frozenset(
    {"verify-ball-mass", "verify-sphere-bounds", "cone-distance", "blowup", "fr-metric"}
)
# commands that may run without a polynomial
OPTIONAL_POLYNOMIAL = frozenset({"verify-ball-mass", "verify-sphere-bounds", "lewy-demo"})
# commands that draw random polynomials when their section sets count > 0
BATTERY_COMMANDS = frozenset({"doubling-scan", "cone-distance"})
COMMAND_ALIASES = {
    "verify-lemma-4-2": "verify-ball-mass",
    "verify-section-3": "verify-sphere-bounds",
}
TOP_LEVEL_KEYS = frozenset(
    {"command", "polynomial", "dim", "seed", "threads", "out", *COMMANDS, *COMMAND_ALIASES}
)
DEFAULT_DIM = 3
DEFAULT_OUT = "reports"


class ConfigError(ValueError):
    def __init__(self, message: str, diagnostics: Optional[List[str]] = None):
        self.diagnostics = list(diagnostics or [])
        detail = "; ".join(self.diagnostics)
        super().__init__(f"{message}: {detail}" if detail else message)


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    polynomial: Optional[Poly]
    params: Mapping[str, Any]
    seed: Optional[int]
    threads: int
    out: Path
    source: Optional[Path] = None
    dim: int = DEFAULT_DIM
    raw: Mapping[str, Any] = field(default_factory=dict, repr=False, compare=False)

    def param(self, key: str, default: Any = None) -> Any:
        return self.params.get(key, default)

    @property
    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    def describe(self) -> Dict[str, Any]:
        """JSON-ready echo of the resolved config for reports."""
        return {
            "command": self.command,
            "polynomial": self.polynomial.to_json() if self.polynomial is not None else None,
            "params": dict(self.params),
            "seed": self.seed,
            "dim": self.dim,
        }


def parse_radii(spec: Any) -> List[float]:
    """A list of radii or a geometric grid ``{"start": a, "stop": b, "num": m}``."""
    if isinstance(spec, Mapping):
        try:
            start, stop, num = float(spec["start"]), float(spec["stop"]), int(spec["num"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError("invalid radii grid", [f"radii: {exc}"]) from exc
        if start <= 0 or stop <= 0 or num < 1:
            raise ConfigError("invalid radii grid", ["radii: start, stop > 0 and num >= 1"])
        return [float(r) for r in np.geomspace(start, stop, num)]
    if isinstance(spec, (list, tuple)) and spec:
        try:
            values = [float(r) for r in spec]
        except (TypeError, ValueError) as exc:
            raise ConfigError("invalid radii list", [f"radii: {exc}"]) from exc
        if any(r <= 0 for r in values):
            raise ConfigError("invalid radii list", ["radii: every radius must be positive"])
        return values
    raise ConfigError("invalid radii", ["radii: expected a non-empty list or a start/stop/num grid"])


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _type_matches(default: Any, value: Any) -> bool:
    if isinstance(default, bool):
        return isinstance(value, bool)
    if _is_int(default):
        return _is_int(value)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    return True


def _validate_section(command: str, defaults: Mapping[str, Any], section: Any) -> List[str]:
    problems: List[str] = []
    if not isinstance(section, Mapping):
        return [f"{command}: section must be an object"]
    for key, value in section.items():
        if key not in defaults:
            problems.append(f"{command}.{key}: unknown parameter")
        elif key == "radii":
            try:
                parse_radii(value)
            except ConfigError as exc:
                problems.extend(f"{command}.{d}" for d in exc.diagnostics)
        elif not _type_matches(defaults[key], value):
            expected = type(defaults[key]).__name__
            problems.append(f"{command}.{key}: expected {expected}, got {value!r}")
    return problems


def _read_json(path: Path) -> Dict[str, Any]:
    text = path.read_text(encoding="utf-8")
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON", [str(exc)]) from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"{path} must contain a JSON object")
    return payload


def _resolve_polynomial(
    spec: Any, dim: int, base_dir: Optional[Path]
) -> Tuple[Optional[Poly], List[str]]:
    if spec is None:
        return None, []
    if isinstance(spec, str) and spec.strip().lower() == "lewy":
        return lewy_polynomial(), []
    if isinstance(spec, Mapping) and "file" in spec:
        path = Path(str(spec["file"]))
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        try:
            spec = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            return None, [f"polynomial.file: cannot read {path}: {exc}"]
        except json.JSONDecodeError as exc:
            return None, [f"polynomial.file: {path} is not valid JSON: {exc}"]
    try:
        poly = load_polynomial(spec, dim)
    except PolyError as exc:
        return None, [f"polynomial: {exc}"]
    if poly.dim != dim:
        return None, [f"polynomial: dimension {poly.dim} does not match dim {dim}"]
    return poly, []


def build_experiment_config(
    payload: Mapping[str, Any],
    *,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    out: Optional[Path] = None,
    source: Optional[Path] = None,
    loader: Optional[ConfigLoader] = None,
) -> ExperimentConfig:
    """Validate a parsed config mapping; every schema problem is collected before raising."""
    loader = loader or ConfigLoader()
    problems: List[str] = []

    for key in payload:
        if key not in TOP_LEVEL_KEYS:
            problems.append(f"{key}: unknown top-level key")

    named = payload.get("command")
    command = COMMAND_ALIASES.get(named, named) if isinstance(named, str) else named
    if command not in COMMANDS:
        problems.append(f"command: expected one of {', '.join(COMMANDS)}, got {named!r}")
        raise ConfigError("invalid experiment config", problems)

    all_defaults = loader.section("commands")
    defaults = all_defaults.get(command, {})
    own_names = {command} | {alias for alias, name in COMMAND_ALIASES.items() if name == command}
    present = [name for name in sorted(own_names) if name in payload]
    if len(present) > 1:
        problems.append(f"{present[1]}: duplicates the {present[0]} section")
    section = payload.get(present[0], {}) if present else {}
    problems.extend(_validate_section(command, defaults, section))
    for other in (*COMMANDS, *COMMAND_ALIASES):
        if other not in own_names and other in payload:
            problems.append(f"{other}: section does not belong to command {command}")
    params = deep_merge(defaults, section if isinstance(section, Mapping) else {})

    dim = payload.get("dim", DEFAULT_DIM)
    if not _is_int(dim) or dim < 2:
        problems.append(f"dim: expected an integer >= 2, got {dim!r}")
        dim = DEFAULT_DIM

    resolved_seed = seed if seed is not None else payload.get("seed")
    if resolved_seed is not None and (not _is_int(resolved_seed) or resolved_seed < 0):
        problems.append(f"seed: expected a non-negative integer, got {resolved_seed!r}")
    battery = command in BATTERY_COMMANDS and _is_int(params.get("count")) and params["count"] > 0
    if resolved_seed is None and command in STOCHASTIC_COMMANDS:
        problems.append(f"seed: required for the stochastic command {command}")
    elif resolved_seed is None and battery:
        problems.append(f"seed: required for a random {command} battery")

    env_threads = loader.get("POLYHARM_THREADS", 1)
    resolved_threads = threads if threads is not None else payload.get("threads", env_threads)
    try:
        resolved_threads = int(resolved_threads)
    except (TypeError, ValueError):
        problems.append(f"threads: expected a positive integer, got {resolved_threads!r}")
        resolved_threads = 1
    if resolved_threads < 1:
        problems.append(f"threads: expected a positive integer, got {resolved_threads}")

    base_dir = source.parent if source is not None else None
    poly_spec = payload.get("polynomial", params.pop("polynomial", None))
    poly, poly_problems = _resolve_polynomial(poly_spec, dim, base_dir)
    problems.extend(poly_problems)
    if poly is None and not poly_problems and command not in OPTIONAL_POLYNOMIAL and not battery:
        problems.append(f"polynomial: required for command {command}")

    if problems:
        raise ConfigError("invalid experiment config", problems)

    resolved_out = Path(out) if out is not None else Path(payload.get("out", DEFAULT_OUT))
    return ExperimentConfig(
        command=command,
        polynomial=poly,
        params=params,
        seed=resolved_seed,
        threads=resolved_threads,
        out=resolved_out,
        source=source,
        dim=dim,
        raw=dict(payload),
    )


def load_experiment_config(
    path: Path,
    *,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    out: Optional[Path] = None,
    loader: Optional[ConfigLoader] = None,
) -> ExperimentConfig:
    """Read a JSON experiment config; raises OSError if the file cannot be read and
    ConfigError with diagnostics for schema problems."""
    path = Path(path)
    payload = _read_json(path)
    return build_experiment_config(
        payload, seed=seed, threads=threads, out=out, source=path, loader=loader
    )
