"""CSV readers for the benchmark output files.

Three files are understood, all identified by their header line:
per-run rows, pivot tables (profile rows x s_<k> columns), and sweep
aggregates.  Anything else raises SchemaError naming what is missing.
"""

import csv
import re

import numpy as np

RUNS_COLUMNS = ("objective", "profile", "s", "seed", "J_total", "w_energy",
                "J_bar", "feasible", "gamma_max", "runtime_s")
SWEEP_COLUMNS = ("objective", "s", "J_bar_mean", "J_bar_std", "runs")

_LABEL_RE = re.compile(r"^(?P<kind>[A-Za-z0-9_]+)(\[(?P<params>.*)\])?$")


class SchemaError(ValueError):
    """A CSV file does not match the documented benchmark schema."""


def _read_table(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError("%s: empty file" % path)
    return rows[0], rows[1:]


def _require(path, header, needed):
    missing = [c for c in needed if c not in header]
    if missing:
        raise SchemaError("%s: missing columns: %s"
                          % (path, ", ".join(missing)))


def load_runs(path):
    """Per-run rows as a list of dicts with typed fields."""
    header, body = _read_table(path)
    _require(path, header, RUNS_COLUMNS)
    idx = {c: header.index(c) for c in RUNS_COLUMNS}
    out = []
    for raw in body:
        out.append({
            "objective": raw[idx["objective"]],
            "profile": raw[idx["profile"]],
            "s": int(raw[idx["s"]]),
            "seed": int(raw[idx["seed"]]),
            "J_total": float(raw[idx["J_total"]]),
            "w_energy": float(raw[idx["w_energy"]]),
            "J_bar": float(raw[idx["J_bar"]]),
            "feasible": raw[idx["feasible"]] == "1",
            "gamma_max": float(raw[idx["gamma_max"]]),
            "runtime_s": float(raw[idx["runtime_s"]]),
        })
    return out


def load_pivot(path):
    """Pivot table: (profile labels, stride values, value matrix)."""
    header, body = _read_table(path)
    _require(path, header[:1], ("profile",))
    svals = []
    for col in header[1:]:
        if not col.startswith("s_"):
            raise SchemaError("%s: unexpected pivot column %r" % (path, col))
        svals.append(int(col[2:]))
    if not svals:
        raise SchemaError("%s: missing columns: s_<k>" % path)
    profiles = [row[0] for row in body]
    if not profiles:
        raise SchemaError("%s: pivot has no rows" % path)
    values = np.array([[float(v) for v in row[1:]] for row in body])
    return profiles, svals, values


def load_sweep(path):
    """Sweep aggregate rows as a list of dicts with typed fields."""
    header, body = _read_table(path)
    _require(path, header, SWEEP_COLUMNS)
    idx = {c: header.index(c) for c in SWEEP_COLUMNS}
    out = []
    for raw in body:
        out.append({
            "objective": raw[idx["objective"]],
            "s": int(raw[idx["s"]]),
            "J_bar_mean": float(raw[idx["J_bar_mean"]]),
            "J_bar_std": float(raw[idx["J_bar_std"]]),
            "runs": int(raw[idx["runs"]]),
        })
    return out


def sniff(path):
    """Which of the three schemas a file carries: runs | pivot | sweep."""
    header, _ = _read_table(path)
    if all(c in header for c in RUNS_COLUMNS):
        return "runs"
    if all(c in header for c in SWEEP_COLUMNS):
        return "sweep"
    if header[:1] == ["profile"]:
        return "pivot"
    raise SchemaError(
        "%s: header matches no benchmark schema; missing columns: %s"
        % (path, ", ".join(c for c in RUNS_COLUMNS if c not in header)))


def parse_label(label):
    """Split 'sin[omega=0.15708;phi=0]' into ('sin', {params})."""
    m = _LABEL_RE.match(label)
    if m is None:
        raise SchemaError("malformed profile label %r" % label)
    params = {}
    if m.group("params"):
        for item in m.group("params").split(";"):
            key, _, val = item.partition("=")
            if not _ or not key:
                raise SchemaError("malformed profile label %r" % label)
            params[key] = float(val)
    return m.group("kind"), params
