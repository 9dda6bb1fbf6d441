"""CSV serialization of loop traces.

One row per TraceRecord; vector fields are expanded into numbered columns
(``y_meas0, y_meas1, ...``).  Floats are written with ``repr`` so that
parsing a written file reproduces the in-memory trace exactly.
"""

from __future__ import annotations

import csv
import io
from dataclasses import fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .loop import TraceRecord

VECTOR_FIELDS = ("y_meas", "y_raw", "rates", "u_cmd", "clamped")
INT_FIELDS = ("step", "faults_injected", "faults_masked", "faults_reexecuted",
              "jobs_resolved", "jobs_missed")
FLOAT_FIELDS = ("miss_ratio", "pred_err_norm", "cost")


def header(n: int, m: int) -> list[str]:
    sizes = {"y_meas": n, "y_raw": n, "rates": m, "u_cmd": m, "clamped": m}
    cols = []
    for f in fields(TraceRecord):
        if f.name in sizes:
            cols += [f"{f.name}{i}" for i in range(sizes[f.name])]
        else:
            cols.append(f.name)
    return cols


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def format_trace(trace: Sequence[TraceRecord], n: int | None = None, m: int | None = None) -> str:
    """Render a trace as CSV text (``\\n`` line endings)."""
    if trace:
        n, m = len(trace[0].y_meas), len(trace[0].rates)
    elif n is None or m is None:
        raise ValueError("an empty trace needs explicit dimensions for its header")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header(n, m))
    for rec in trace:
        row = []
        for f in fields(TraceRecord):
            value = getattr(rec, f.name)
            if f.name in VECTOR_FIELDS:
                row += [_cell(v) for v in value]
            else:
                row.append(_cell(value))
        writer.writerow(row)
    return buf.getvalue()


def write_trace(path, trace: Sequence[TraceRecord], n: int | None = None, m: int | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_trace(trace, n, m))
    return path


def parse_trace(text: str) -> list[TraceRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError("trace file is empty (no header)")
    cols = rows[0]
    index = {name: i for i, name in enumerate(cols)}

    def vector_columns(name):
        out, i = [], 0
        while f"{name}{i}" in index:
            out.append(index[f"{name}{i}"])
            i += 1
        return out

    vcols = {name: vector_columns(name) for name in VECTOR_FIELDS}
    for name in INT_FIELDS + FLOAT_FIELDS:
        if name not in index:
            raise ValueError(f"trace header lacks column {name!r}")
    trace = []
    for line, row in enumerate(rows[1:], start=2):
        if len(row) != len(cols):
            raise ValueError(f"line {line}: expected {len(cols)} cells, got {len(row)}")
        kw = {name: int(row[index[name]]) for name in INT_FIELDS}
        kw.update({name: float(row[index[name]]) for name in FLOAT_FIELDS})
        for name, idx in vcols.items():
            if name == "clamped":
                kw[name] = np.array([row[i] == "1" for i in idx], dtype=bool)
            else:
                kw[name] = np.array([float(row[i]) for i in idx])
        trace.append(TraceRecord(**kw))
    return trace


def read_trace(path) -> list[TraceRecord]:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_trace(fh.read())
