"""CSV ingestion, sliding averages and report files."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import warnings
from datetime import datetime

import numpy as np

from .model import ObservationSequence

__all__ = [
    "IngestError",
    "ingest_csv",
    "write_counts_csv",
    "sliding_average",
    "format_number",
    "emit_report",
]

log = logging.getLogger(__name__)


class IngestError(ValueError):
    pass


def _parse_time(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return datetime.fromisoformat(text).timestamp()


def ingest_csv(path, modality: str | None = None, *, integer: bool = True, round_counts: bool = False,
               fill_gaps: str = "none", interval_seconds: float = 3.0) -> ObservationSequence:
    """Read an ``index,value`` or ``timestamp,value`` file into a sequence.

    Indices must increase by exactly one.  ``fill_gaps="zero"`` or ``"hold"``
    imputes missing indices instead of failing.  Timestamps are mapped to
    indices with ``interval_seconds`` spacing, starting at index 1.
    """
    label = f"{modality}: " if modality else ""
    if not os.path.exists(path):
        raise IngestError(f"{label}no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise IngestError(f"{label}{path}: empty file, expected a header")
    header = [h.strip().lower() for h in rows[0]]
    if header not in (["index", "value"], ["timestamp", "value"]):
        raise IngestError(f"{label}{path}: header must be 'index,value' or 'timestamp,value', got {rows[0]}")
    timestamped = header[0] == "timestamp"

    idx, vals = [], []
    t0 = None
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise IngestError(f"{label}{path}: line {lineno}: expected 2 fields, got {len(row)}")
        try:
            if timestamped:
                t = _parse_time(row[0].strip())
                kf = None
            else:
                kf = float(row[0])
            v = float(row[1])
        except ValueError:
            raise IngestError(f"{label}{path}: line {lineno}: malformed row {row}") from None
        if timestamped:
            if t0 is None:
                t0 = t
            off = (t - t0) / interval_seconds
            if abs(off - round(off)) > 1e-9:
                raise IngestError(f"{label}{path}: line {lineno}: timestamp is not on the "
                                  f"{interval_seconds}s sampling grid")
            k = int(round(off)) + 1
        else:
            if not math.isfinite(kf) or kf != int(kf) or kf < 1:
                raise IngestError(f"{label}{path}: line {lineno}: index must be a positive integer")
            k = int(kf)
        if not math.isfinite(v) or v < 0:
            raise IngestError(f"{label}{path}: line {lineno}: negative or non-finite value {row[1].strip()}")
        if integer and v != math.floor(v):
            if not round_counts:
                raise IngestError(f"{label}{path}: line {lineno}: non-integer count {row[1].strip()} "
                                  f"(enable round_counts to round)")
            v = float(round(v))
        if idx:
            if k == idx[-1]:
                raise IngestError(f"{label}{path}: line {lineno}: duplicate index {k}")
            if k < idx[-1]:
                raise IngestError(f"{label}{path}: line {lineno}: index {k} decreases after {idx[-1]}")
            if k > idx[-1] + 1:
                if fill_gaps == "none":
                    raise IngestError(f"{label}{path}: line {lineno}: gap between indices {idx[-1]} and {k}")
                fill = 0.0 if fill_gaps == "zero" else vals[-1]
                log.warning("%s%s: filling %d missing samples before index %d with %s",
                            label, path, k - idx[-1] - 1, k, fill_gaps)
                for j in range(idx[-1] + 1, k):
                    idx.append(j)
                    vals.append(fill)
        idx.append(k)
        vals.append(v)
    if round_counts:
        log.info("%s%s: non-integer counts rounded", label, path)
    return ObservationSequence(np.array(vals), idx[0] if idx else 1)


def format_number(x) -> str:
    """15-significant-digit rendering; integral values print without a fraction."""
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return format(x, ".15g")


def write_counts_csv(seq: ObservationSequence, path) -> str:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("index,value\n")
        for k, v in zip(seq.indices, seq.values):
            fh.write(f"{k},{format_number(v)}\n")
    return str(path)


def sliding_average(seq, window: int) -> np.ndarray:
    """Means of every run of ``window`` consecutive values (plotting only)."""
    values = seq.values if isinstance(seq, ObservationSequence) else np.asarray(seq, dtype=float)
    if window < 1:
        raise ValueError("window must be at least 1")
    n = len(values)
    if window > n:
        warnings.warn(f"window {window} longer than the sequence ({n}); returning an empty result")
        return np.zeros(0)
    c = np.concatenate([[0.0], np.cumsum(values)])
    return (c[window:] - c[:-window]) / window


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _to_jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def emit_report(output, fmt: str, dest) -> list:
    """Write a scenario or efficiency report under directory ``dest``.

    ``fmt="json"`` writes ``report.json``.  ``fmt="csv"`` writes, for a
    scenario, one ``trajectory_<modality>.csv`` (``n,W``) per modality and
    ``alarms.csv``; for an efficiency report, ``efficiency.csv``.
    Returns the written paths.
    """
    os.makedirs(dest, exist_ok=True)
    doc = output.to_dict() if hasattr(output, "to_dict") else output
    if fmt == "json":
        path = os.path.join(dest, "report.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(_to_jsonable(doc), fh, indent=1, sort_keys=True)
            fh.write("\n")
        return [path]
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}")
    doc = _to_jsonable(doc)
    paths = []
    if doc.get("type") == "scenario":
        for name, mod in doc["modalities"].items():
            path = os.path.join(dest, f"trajectory_{name}.csv")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write("n,W\n")
                for n, w in zip(mod["n"], mod["W"]):
                    fh.write(f"{n},{format(float(w), '.15g')}\n")
            paths.append(path)
        path = os.path.join(dest, "alarms.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("modality,day,index,statistic,arg_batch,arg_lambda\n")
            for a in doc["alarms"]:
                lam = a["arg_lambda"]
                lam = " ".join(format(float(x), ".15g") for x in lam) if isinstance(lam, list) else \
                    format(float(lam), ".15g")
                day = "" if a["day"] is None else a["day"]
                batch = "" if a["arg_batch"] is None else a["arg_batch"]
                fh.write(f"{a['modality']},{day},{a['index']},{format(float(a['statistic']), '.15g')},"
                         f"{batch},{lam}\n")
        paths.append(path)
        return paths
    path = os.path.join(dest, "efficiency.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("beta,threshold,mtfa,mtfa_stderr,mtfa_censored,delay,delay_stderr\n")
        for b, a, m, d in zip(doc["betas"], doc["thresholds"], doc["mtfa"], doc["delay"]):
            fh.write(",".join(format(float(x), ".15g") for x in
                              (b, a, m["mean"], m["stderr"], m["censored"], d["mean"], d["stderr"])) + "\n")
    return [path]
