"""Deterministic, atomic CSV/JSON emission."""
from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidParameterError, ReconError


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return format(f, ".17g")
    return str(v)


@dataclass
class CsvTable:
    header: Sequence[str]
    rows: list = field(default_factory=list)

    def __post_init__(self):
        width = len(self.header)
        for k, row in enumerate(self.rows):
            if len(row) != width:
                raise InvalidParameterError(
                    f"row {k} has {len(row)} values, header has {width} columns")

    def render(self, comment: Optional[str] = None) -> str:
        lines = []
        if comment:
            lines.append("# " + comment)
        lines.append(",".join(self.header))
        lines.extend(",".join(format_value(v) for v in row) for row in self.rows)
        return "\n".join(lines) + "\n"


def provenance(seed, config_hash) -> str:
    return f"seed={seed} config_hash={config_hash}"


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise ReconError(f"could not write {path}: {exc}") from exc


def write_table(table: CsvTable, path, comment: Optional[str] = None) -> None:
    """Write ``table`` as UTF-8 CSV with LF endings via temp file + rename."""
    _atomic_write(path, table.render(comment))


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        # JSON has no inf/nan; keep them as strings rather than emit invalid JSON
        return f if math.isfinite(f) else format_value(f)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def write_json(data: dict, path, seed=None, config_hash=None) -> None:
    """JSON cannot hold comments, so provenance goes into a ``meta`` object."""
    payload = dict(_jsonable(data))
    payload["meta"] = {"seed": seed, "config_hash": config_hash}
    _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_table(path):
    """Return ``(comments, header, rows)`` with rows as lists of strings."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    comments = [ln for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if ln and not ln.startswith("#")]
    if not body:
        return comments, [], []
    return comments, body[0].split(","), [ln.split(",") for ln in body[1:]]
