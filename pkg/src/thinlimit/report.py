"""Check results and CSV/JSON emitters shared by the harness and the CLI."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, is_dataclass
from typing import Any

import numpy as np


@dataclass
class CheckResult:
    """Outcome of one sampled hypothesis check.

    ``value`` is the quantity whose sign decides the check (a minimum or a
    worst margin); ``witness`` locates the worst or first failing sample.
    """

    name: str
    passed: bool
    value: float = math.nan
    witness: dict[str, Any] = field(default_factory=dict)
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        out = f"{status}  {self.name}: value={self.value:.6g}"
        if self.witness and not self.passed:
            wit = ", ".join(f"{k}={_fmt(v)}" for k, v in self.witness.items())
            out += f"  witness({wit})"
        if self.detail:
            out += f"  [{self.detail}]"
        return out


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def to_jsonable(obj):
    if is_dataclass(obj):
        return to_jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dumps_json(obj) -> str:
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=False) + "\n"


def dumps_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_csv_cell(v) for v in row])
    return buf.getvalue()


def _csv_cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v
