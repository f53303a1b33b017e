"""Figure construction: heat tables and mean/std tube plots.

Rendering is a pure function of the CSV contents and the FigureSpec;
every run with the same inputs writes the same bytes, so the image
metadata that would normally carry timestamps is pinned.
"""

import os
from dataclasses import dataclass, field

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import yaml

from .schema import (SchemaError, load_pivot, load_runs, load_sweep,
                     parse_label, sniff)

KINDS = ("table-heatmap", "tube-plot")

#: metadata overrides that strip the nondeterministic fields per format
_META = {"png": {"Software": "plotkit"},
         "svg": {"Date": None},
         "pdf": {"CreationDate": None}}


@dataclass
class FigureSpec:
    """One figure: input CSVs, kind, axis labels, output path/format."""
    inputs: tuple
    kind: str
    output: str
    format: str = None
    xlabel: str = ""
    ylabel: str = ""
    title: str = ""
    panel_titles: tuple = ()

    def __post_init__(self):
        self.inputs = tuple(self.inputs)
        self.panel_titles = tuple(self.panel_titles)
        if not self.inputs:
            raise ValueError("FigureSpec needs at least one input CSV")
        if self.kind not in KINDS:
            raise ValueError("unknown figure kind %r (have: %s)"
                             % (self.kind, ", ".join(KINDS)))
        if self.format is None:
            ext = os.path.splitext(self.output)[1].lstrip(".")
            self.format = ext.lower() or "png"
        if self.format not in _META:
            raise ValueError("unsupported format %r (have: %s)"
                             % (self.format, ", ".join(sorted(_META))))

    @classmethod
    def from_mapping(cls, d):
        allowed = {"inputs", "kind", "output", "format", "xlabel",
                   "ylabel", "title", "panel_titles"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError("unknown FigureSpec keys: %s"
                             % ", ".join(sorted(unknown)))
        missing = {"inputs", "kind", "output"} - set(d)
        if missing:
            raise ValueError("FigureSpec needs keys: %s"
                             % ", ".join(sorted(missing)))
        return cls(**d)


def load_spec(path):
    """Spec file -> list of FigureSpec (single mapping or figures: [...])."""
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ValueError("%s: spec must be a mapping" % path)
    figs = doc.get("figures", [doc] if "kind" in doc else None)
    if not isinstance(figs, list) or not figs:
        raise ValueError("%s: expected a figure mapping or a non-empty "
                         "'figures' list" % path)
    return [FigureSpec.from_mapping(d) for d in figs]


def row_min_mask(values):
    """Boolean mask marking each row's minimum (first one on ties)."""
    values = np.asarray(values, dtype=float)
    mask = np.zeros(values.shape, dtype=bool)
    mask[np.arange(values.shape[0]), np.argmin(values, axis=1)] = True
    return mask


def swept_param(rows):
    """Name of the numeric profile parameter that varies across rows.

    Exactly one parameter may vary; a sweep over nothing (all labels
    identical) falls back to the replanning stride as the x axis.
    """
    seen = {}
    for r in rows:
        for k, v in parse_label(r["profile"])[1].items():
            seen.setdefault(k, set()).add(v)
    varying = sorted(k for k, vals in seen.items() if len(vals) > 1)
    if len(varying) > 1:
        raise SchemaError("ambiguous sweep: parameters %s all vary"
                          % ", ".join(varying))
    return varying[0] if varying else None


def tube_curves(rows, param):
    """Per stride: sorted x, mean J_bar, std J_bar (over seeds at each x)."""
    groups = {}
    for r in rows:
        if param is None:
            x = float(r["s"])
        else:
            x = parse_label(r["profile"])[1][param]
        groups.setdefault(r["s"], {}).setdefault(x, []).append(r["J_bar"])
    curves = {}
    for s, by_x in sorted(groups.items()):
        xs = np.array(sorted(by_x))
        mean = np.array([np.mean(by_x[x]) for x in xs])
        std = np.array([np.std(by_x[x]) for x in xs])
        curves[s] = (xs, mean, std)
    return curves


def _heat_axes(ax, path, spec):
    profiles, svals, values = load_pivot(path)
    mask = row_min_mask(values)
    ax.imshow(values, cmap="viridis", aspect="auto")
    for i in range(values.shape[0]):
        for j in range(values.shape[1]):
            weight = "bold" if mask[i, j] else "normal"
            ax.text(j, i, "%.2f" % values[i, j], ha="center", va="center",
                    color="white", fontsize=8, fontweight=weight)
            if mask[i, j]:
                ax.add_patch(plt.Rectangle((j - 0.5, i - 0.5), 1, 1,
                                           fill=False, edgecolor="lime",
                                           linewidth=2))
    ax.set_xticks(range(len(svals)), ["s=%d" % s for s in svals])
    ax.set_yticks(range(len(profiles)), profiles)
    ax.set_xlabel(spec.xlabel or "replanning interval")
    ax.set_ylabel(spec.ylabel or "disturbance profile")


def _tube_axes(ax, path, spec):
    if sniff(path) == "sweep":
        # aggregate file: one tube per objective along the stride axis
        by_obj = {}
        for r in load_sweep(path):
            by_obj.setdefault(r["objective"], []).append(
                (r["s"], r["J_bar_mean"], r["J_bar_std"]))
        for objective, pts in sorted(by_obj.items()):
            s, m, sd = map(np.array, zip(*sorted(pts)))
            ax.plot(s, m, marker="o", label=objective)
            ax.fill_between(s, m - sd, m + sd, alpha=0.25)
        ax.set_xlabel(spec.xlabel or "replanning interval")
    else:
        rows = load_runs(path)
        param = swept_param(rows)
        for s, (xs, mean, std) in tube_curves(rows, param).items():
            ax.plot(xs, mean, marker="o", label="s=%d" % s)
            ax.fill_between(xs, mean - std, mean + std, alpha=0.25)
        ax.set_xlabel(spec.xlabel or param or "replanning interval")
    ax.set_ylabel(spec.ylabel or "normalized cost")
    ax.grid(True, alpha=0.3)
    ax.legend()


def build_figure(spec: FigureSpec):
    """Assemble the matplotlib figure; one panel per input CSV."""
    k = len(spec.inputs)
    if spec.kind == "table-heatmap":
        fig, axes = plt.subplots(k, 1, figsize=(7, 3.2 * k), squeeze=False)
        axes = axes[:, 0]
    else:
        fig, axes = plt.subplots(1, k, figsize=(5.2 * k, 3.6),
                                 squeeze=False, sharey=True)
        axes = axes[0]
    for ax, path, i in zip(axes, spec.inputs, range(k)):
        if spec.kind == "table-heatmap":
            _heat_axes(ax, path, spec)
        else:
            _tube_axes(ax, path, spec)
        if i < len(spec.panel_titles):
            ax.set_title(spec.panel_titles[i])
    if spec.title:
        fig.suptitle(spec.title)
    fig.tight_layout()
    return fig


def render(spec: FigureSpec):
    """Write the figure to spec.output; returns the path written."""
    fig = build_figure(spec)
    out_dir = os.path.dirname(spec.output)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    try:
        fig.savefig(spec.output, format=spec.format, dpi=150,
                    metadata=_META[spec.format])
    finally:
        plt.close(fig)
    return spec.output
