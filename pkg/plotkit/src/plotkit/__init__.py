"""Figure rendering for the benchmark CSV outputs."""

from .figures import (FigureSpec, build_figure, load_spec, render,
                      row_min_mask, swept_param, tube_curves)
from .schema import (RUNS_COLUMNS, SWEEP_COLUMNS, SchemaError, load_pivot,
                     load_runs, load_sweep, parse_label, sniff)

__all__ = [
    "FigureSpec", "RUNS_COLUMNS", "SWEEP_COLUMNS", "SchemaError",
    "build_figure", "load_pivot", "load_runs", "load_spec", "load_sweep",
    "parse_label", "render", "row_min_mask", "sniff", "swept_param",
    "tube_curves",
]
