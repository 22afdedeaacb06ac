"""Readers for the simulator's documented file formats.

snapshot_<t>.csv : block_id, x1..xd (one row per particle)
moments.csv      : t, p, moment, stderr
gap.csv          : t, mean_gap_p, w_p_pooled, nested_w_p
report.json      : experiment report with fitted scalars and series files
"""

from __future__ import annotations

import json
import os
import re

import numpy as np

_SNAPSHOT_RE = re.compile(r"snapshot_(.+)\.csv$")


class SchemaError(RuntimeError):
    """An input file does not match the documented column layout."""


def _read_header(path):
    with open(path) as fh:
        return fh.readline().strip().split(",")


def _require_columns(path, found, expected):
    if found != expected:
        raise SchemaError(
            f"{path}: expected columns {expected}, found {found}"
        )


def available_snapshot_times(indir) -> list:
    """Snapshot times present in a run directory, sorted."""
    times = []
    for name in os.listdir(indir):
        m = _SNAPSHOT_RE.match(name)
        if m:
            try:
                times.append(float(m.group(1)))
            except ValueError:
                continue
    return sorted(times)


def snapshot_path(indir, t: float) -> str:
    return os.path.join(indir, f"snapshot_{t:g}.csv")


def load_snapshot(indir, t: float):
    """(block_id array, (n, d) points) for the snapshot at time t."""
    path = snapshot_path(indir, t)
    if not os.path.exists(path):
        avail = available_snapshot_times(indir)
        raise SchemaError(
            f"no snapshot at t={t:g} under {indir}; available times: "
            f"{', '.join(f'{a:g}' for a in avail) or 'none'}"
        )
    header = _read_header(path)
    d = len(header) - 1
    _require_columns(path, header, ["block_id"] + [f"x{j + 1}" for j in range(d)])
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0].astype(int), data[:, 1:]


def load_moments(indir):
    path = os.path.join(indir, "moments.csv")
    _require_columns(path, _read_header(path), ["t", "p", "moment", "stderr"])
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def load_gap(indir):
    path = os.path.join(indir, "gap.csv")
    if not os.path.exists(path):
        raise SchemaError(f"{path}: not found")
    _require_columns(path, _read_header(path),
                     ["t", "mean_gap_p", "w_p_pooled", "nested_w_p"])
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def load_report(indir) -> dict:
    path = os.path.join(indir, "report.json")
    if not os.path.exists(path):
        raise SchemaError(f"{path}: not found")
    with open(path) as fh:
        doc = json.load(fh)
    for key in ("name", "fitted", "series_files", "verdict"):
        if key not in doc:
            raise SchemaError(f"{path}: missing field '{key}'")
    return doc


def load_series(indir, doc: dict, name: str):
    if name not in doc["series_files"]:
        raise SchemaError(
            f"report has no series '{name}'; available: "
            f"{', '.join(sorted(doc['series_files']))}"
        )
    path = os.path.join(indir, doc["series_files"][name])
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
