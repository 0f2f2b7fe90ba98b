"""CSV and JSON report writers.

JSON reports carry no time-dependent fields. CSV reports isolate the timestamp in
their first line so two runs with the same config and seed differ only there.
"""

from __future__ import annotations

import csv
import json
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

PathLike = Union[str, Path]
TIMESTAMP_KEY = "generated_at"


class ReportIOError(OSError):
    pass


def _plain(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if isinstance(value, Mapping):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    return value


def write_json(path: PathLike, payload: Mapping[str, Any]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        text = json.dumps(_plain(payload), sort_keys=True, indent=2)
        path.write_text(text + "\n", encoding="utf-8")
    except OSError as exc:
        raise ReportIOError(f"cannot write {path}: {exc}") from exc
    return path


def _format_cell(value: Any) -> str:
    value = _plain(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(
    path: PathLike,
    columns: Sequence[str],
    rows: Iterable[Union[Sequence[Any], Mapping[str, Any]]],
    metadata: Optional[Mapping[str, Any]] = None,
    *,
    timestamp: Optional[str] = None,
) -> Path:
    path = Path(path)
    stamp = timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as fh:
            fh.write(f"# {TIMESTAMP_KEY}={stamp}\n")
            for key, value in sorted((metadata or {}).items()):
                fh.write(f"# {key}={_format_cell(value)}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                if isinstance(row, Mapping):
                    row = [row.get(c, "") for c in columns]
                writer.writerow([_format_cell(v) for v in row])
    except OSError as exc:
        raise ReportIOError(f"cannot write {path}: {exc}") from exc
    return path


def read_csv(path: PathLike) -> Tuple[Dict[str, str], List[str], List[List[str]]]:
    """Return (metadata, columns, rows) of a report written by ``write_csv``."""
    path = Path(path)
    metadata: Dict[str, str] = {}
    try:
        with path.open("r", encoding="utf-8", newline="") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ReportIOError(f"cannot read {path}: {exc}") from exc
    body = []
    for line in lines:
        if line.startswith("# ") and "=" in line and not body:
            key, _, value = line[2:].partition("=")
            metadata[key] = value
        else:
            body.append(line)
    parsed = list(csv.reader(body))
    if not parsed:
        return metadata, [], []
    return metadata, parsed[0], parsed[1:]


def write_obj_points(path: PathLike, points: np.ndarray) -> Path:
    """Vertex-only OBJ file for external plotting tools."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            for x, y, z in np.asarray(points, dtype=float):
                fh.write(f"v {x!r} {y!r} {z!r}\n")
    except OSError as exc:
        raise ReportIOError(f"cannot write {path}: {exc}") from exc
    return path
