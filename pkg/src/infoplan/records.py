"""Versioned CSV and JSON outputs."""

from __future__ import annotations

import csv
import json
import math
import re
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SCHEMA_VERSION = 1


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return "%.17g" % v
    return str(v)


def write_csv(path: Path, schema: str, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Write ``rows`` under a ``# schema: infoplan.<schema>/<version>`` line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# schema: infoplan.{schema}/{SCHEMA_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path: Path) -> tuple[str, list[str], list[list[str]]]:
    """Return ``(schema line, header, rows)``."""
    with Path(path).open(newline="") as fh:
        schema = fh.readline().rstrip("\n")
        r = list(csv.reader(fh))
    return schema, r[0], r[1:]


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _finite(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(x, dict):
        return {k: _finite(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_finite(v) for v in x]
    return x


def write_json(path: Path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_finite(json.loads(json.dumps(payload, default=_json_default))), indent=2, sort_keys=True)
    path.write_text(text + "\n")
    return path


def slug(label: str) -> str:
    """File-name-safe form of a planner label."""
    s = label.replace("=", "-")
    return re.sub(r"[^A-Za-z0-9.\-]+", "_", s).strip("_")
