"""Result records: JSON lines plus a CSV projection of the numeric metrics.

A `CheckRecord` is one assertion (or report) of one module at one N. A
`RunRecord` bundles the check records of one invocation with the config hash,
the master seed, timings and library versions. The `payload` of a run record
excludes timings, so two runs with the same seed have identical payloads.
"""

from __future__ import annotations

import csv
import json
import math
import platform
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

CHECK_SCHEMA = {
    "type": "object",
    "required": ["kind", "module", "name", "passed", "asserted", "metrics"],
    "properties": {
        "kind": {"const": "check"},
        "module": {"type": "string"},
        "name": {"type": "string"},
        "N": {"type": ["integer", "null"]},
        "passed": {"type": ["boolean", "null"]},
        "asserted": {"type": "boolean"},
        "metrics": {"type": "object"},
        "error": {"type": ["string", "null"]},
    },
    "additionalProperties": False,
}

RUN_SCHEMA = {
    "type": "object",
    "required": ["kind", "config_hash", "seed", "checks", "versions", "timings"],
    "properties": {
        "kind": {"const": "run"},
        "command": {"type": "string"},
        "config_hash": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "checks": {"type": "array", "items": CHECK_SCHEMA},
        "versions": {"type": "object"},
        "timings": {"type": "object", "additionalProperties": {"type": "number"}},
    },
    "additionalProperties": False,
}


def plain(obj):
    """Recursively convert numpy scalars and arrays to JSON types; non-finite floats become None."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "as_dict"):
        return plain(obj.as_dict())
    return str(obj)


@dataclass
class CheckRecord:
    module: str
    name: str
    passed: bool | None
    metrics: dict
    N: int | None = None
    asserted: bool = True
    error: str | None = None

    def as_dict(self) -> dict:
        return {"kind": "check", "module": self.module, "name": self.name,
                "N": None if self.N is None else int(self.N),
                "passed": None if self.passed is None else bool(self.passed),
                "asserted": bool(self.asserted), "metrics": plain(self.metrics),
                "error": self.error}

    @property
    def failed(self) -> bool:
        return self.asserted and self.passed is False


def versions() -> dict:
    import numba
    import scipy

    from .. import __version__
    return {"tiltcouple": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


@dataclass
class RunRecord:
    config_hash: str
    seed: int
    command: str = "suite"
    checks: list[CheckRecord] = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def add(self, record: CheckRecord, elapsed: float | None = None) -> None:
        self.checks.append(record)
        if elapsed is not None:
            self.timings[f"{record.module}.{record.name}" + ("" if record.N is None else f".N{record.N}")] = elapsed

    @property
    def passed(self) -> bool:
        return not any(c.failed for c in self.checks)

    def payload(self) -> dict:
        return {"command": self.command, "config_hash": self.config_hash, "seed": int(self.seed),
                "checks": [c.as_dict() for c in self.checks]}

    def as_dict(self) -> dict:
        d = {"kind": "run", **self.payload(), "versions": versions(),
             "timings": {k: float(v) for k, v in self.timings.items()}}
        return d


def validate_check(obj: dict) -> None:
    jsonschema.validate(obj, CHECK_SCHEMA)


def validate_run(obj: dict) -> None:
    jsonschema.validate(obj, RUN_SCHEMA)


def dumps(obj: dict) -> str:
    return json.dumps(plain(obj), sort_keys=True, allow_nan=False)


def append_jsonl(path: str | Path, records) -> None:
    """Append one JSON object per line; the file is only ever extended."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a") as fh:
        for r in records:
            fh.write(dumps(r.as_dict() if hasattr(r, "as_dict") else r) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _flatten(prefix: str, value, out: list):
    if isinstance(value, dict):
        for k, v in value.items():
            _flatten(f"{prefix}.{k}" if prefix else str(k), v, out)
    elif isinstance(value, list):
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            for i, v in enumerate(value):
                out.append((f"{prefix}[{i}]", v))
    elif isinstance(value, bool):
        out.append((prefix, int(value)))
    elif isinstance(value, (int, float)):
        out.append((prefix, value))


def csv_rows(checks) -> list[dict]:
    """Long-format projection: one row per numeric metric of every check."""
    rows = []
    for c in checks:
        d = c.as_dict() if hasattr(c, "as_dict") else c
        flat = []
        _flatten("", d["metrics"], flat)
        for key, value in flat:
            rows.append({"module": d["module"], "name": d["name"],
                         "N": "" if d["N"] is None else d["N"], "metric": key, "value": value})
    return rows


def write_csv(path: str | Path, checks) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["module", "name", "N", "metric", "value"])
        w.writeheader()
        w.writerows(csv_rows(checks))
