"""plotkit tests on handcrafted CSV files (no benchmark code needed)."""

import numpy as np
import pytest
import yaml

pytest.importorskip("plotkit")

from plotkit import (FigureSpec, SchemaError, build_figure, load_pivot,
                     load_runs, load_spec, load_sweep, parse_label, render,
                     row_min_mask, sniff, swept_param, tube_curves)
from plotkit.cli import main

RUNS_HEADER = ("objective,profile,s,seed,J_total,w_energy,J_bar,"
               "feasible,gamma_max,runtime_s")


def write_runs(path, rows):
    lines = [RUNS_HEADER]
    for r in rows:
        lines.append("%s,%s,%d,%d,%.17g,%.17g,%.17g,%d,%.17g,%.17g" % r)
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def sweep_rows(param, values, s_list, jbar):
    """One deterministic run per (value, s): J_bar = jbar(value, s)."""
    rows = []
    for v in values:
        label = "sin[omega=%.6g;phi=%.6g]" % ((v, 0) if param == "omega"
                                              else (0.157, v))
        for s in s_list:
            rows.append(("regret_fixed_gamma", label, s, 0, jbar(v, s),
                         1.0, jbar(v, s), 1, 2.5, 0.1))
    return rows


def test_parse_label():
    kind, params = parse_label("sin[omega=0.15708;phi=0]")
    assert kind == "sin"
    assert params == {"omega": 0.15708, "phi": 0.0}
    assert parse_label("constant") == ("constant", {})
    with pytest.raises(SchemaError):
        parse_label("sin[omega]")


def test_load_runs_and_missing_columns(tmp_path):
    rows = sweep_rows("phi", [0.0, 1.0], [1], lambda v, s: 2.0 + v)
    path = write_runs(tmp_path / "runs.csv", rows)
    loaded = load_runs(path)
    assert len(loaded) == 2
    assert loaded[0]["feasible"] is True
    assert loaded[1]["J_bar"] == 3.0
    bad = tmp_path / "bad.csv"
    bad.write_text("objective,profile,s,seed\nh2,constant,1,0\n")
    with pytest.raises(SchemaError) as err:
        load_runs(str(bad))
    assert "J_bar" in str(err.value) and "gamma_max" in str(err.value)


def test_load_pivot_and_sniff(tmp_path):
    p = tmp_path / "pivot.csv"
    p.write_text("profile,s_1,s_5\nconstant,18.56,8.42\nramp,3.0,4.0\n")
    profiles, svals, values = load_pivot(str(p))
    assert profiles == ["constant", "ramp"] and svals == [1, 5]
    assert values[0, 1] == 8.42
    assert sniff(str(p)) == "pivot"
    q = tmp_path / "sweep.csv"
    q.write_text("objective,s,J_bar_mean,J_bar_std,runs\nh2,1,2.0,0.5,10\n")
    assert sniff(str(q)) == "sweep"
    assert load_sweep(str(q))[0]["J_bar_std"] == 0.5
    r = tmp_path / "junk.csv"
    r.write_text("a,b\n1,2\n")
    with pytest.raises(SchemaError):
        sniff(str(r))


def test_row_min_mask_single_row():
    # a one-row pivot highlights exactly its smallest (here: only) cell
    mask = row_min_mask([[4.2]])
    assert mask.shape == (1, 1) and mask[0, 0]
    mask = row_min_mask([[3.0, 1.0, 2.0], [5.0, 5.0, 6.0]])
    assert mask.tolist() == [[False, True, False], [True, False, False]]


def test_swept_param_and_curves(tmp_path):
    rows = sweep_rows("phi", [0.0, 0.5, 1.0], [1, 5],
                      lambda v, s: 10.0 - v + s)
    loaded = load_runs(write_runs(tmp_path / "r.csv", rows))
    assert swept_param(loaded) == "phi"
    curves = tube_curves(loaded, "phi")
    assert set(curves) == {1, 5}
    xs, mean, std = curves[1]
    assert xs.tolist() == [0.0, 0.5, 1.0]
    assert mean.tolist() == [11.0, 10.5, 10.0]
    # single run per point: the tube has zero width and collapses to the
    # mean line
    assert np.all(std == 0.0)


def test_tube_std_over_seeds(tmp_path):
    rows = [("h2", "gaussian", 1, 0, 2.0, 1.0, 2.0, 1, 2.5, 0.1),
            ("h2", "gaussian", 1, 1, 4.0, 1.0, 4.0, 1, 2.5, 0.1)]
    loaded = load_runs(write_runs(tmp_path / "r.csv", rows))
    assert swept_param(loaded) is None
    curves = tube_curves(loaded, None)
    xs, mean, std = curves[1]
    assert mean.tolist() == [3.0] and std.tolist() == [1.0]


def test_spec_validation(tmp_path):
    with pytest.raises(ValueError):
        FigureSpec(inputs=(), kind="tube-plot", output="x.png")
    with pytest.raises(ValueError):
        FigureSpec(inputs=("a.csv",), kind="scatter", output="x.png")
    with pytest.raises(ValueError):
        FigureSpec(inputs=("a.csv",), kind="tube-plot", output="x.bmp")
    with pytest.raises(ValueError):
        FigureSpec.from_mapping({"kind": "tube-plot"})
    with pytest.raises(ValueError):
        FigureSpec.from_mapping({"inputs": ["a.csv"], "kind": "tube-plot",
                                 "output": "x.png", "dpi": 300})
    spec = FigureSpec(inputs=["a.csv"], kind="tube-plot", output="x.svg")
    assert spec.format == "svg" and spec.inputs == ("a.csv",)


def test_heat_table_single_cell(tmp_path):
    p = tmp_path / "pivot.csv"
    p.write_text("profile,s_1\nconstant,18.56\n")
    spec = FigureSpec(inputs=(str(p),), kind="table-heatmap",
                      output=str(tmp_path / "t.png"))
    out = render(spec)
    data = open(out, "rb").read()
    assert data[:8] == b"\x89PNG\r\n\x1a\n"


def test_two_panel_layout(tmp_path):
    phi = write_runs(tmp_path / "phi.csv",
                     sweep_rows("phi", [0.0, 0.5, 1.0], [1, 2],
                                lambda v, s: 5.0 + v * s))
    omega = write_runs(tmp_path / "omega.csv",
                       sweep_rows("omega", [0.2, 0.4, 0.6], [1, 2],
                                  lambda v, s: 6.0 - v))
    spec = FigureSpec(inputs=(phi, omega), kind="tube-plot",
                      output=str(tmp_path / "fig2.png"),
                      panel_titles=("phase sweep", "frequency sweep"))
    fig = build_figure(spec)
    try:
        assert len(fig.axes) == 2
        assert fig.axes[0].get_xlabel() == "phi"
        assert fig.axes[1].get_xlabel() == "omega"
        assert fig.axes[0].get_title() == "phase sweep"
    finally:
        import matplotlib.pyplot as plt
        plt.close(fig)
    assert render(spec) == str(tmp_path / "fig2.png")


def test_deterministic_rerender(tmp_path):
    p = tmp_path / "pivot.csv"
    p.write_text("profile,s_1,s_2\nconstant,2.0,1.0\nramp,0.5,0.8\n")
    a = render(FigureSpec(inputs=(str(p),), kind="table-heatmap",
                          output=str(tmp_path / "a.png")))
    b = render(FigureSpec(inputs=(str(p),), kind="table-heatmap",
                          output=str(tmp_path / "b.png")))
    assert open(a, "rb").read() == open(b, "rb").read()


def test_sweep_file_tube(tmp_path):
    q = tmp_path / "sweep.csv"
    q.write_text("objective,s,J_bar_mean,J_bar_std,runs\n"
                 "h2,1,2.0,0.5,10\nh2,5,1.5,0.2,10\n"
                 "hinf,1,3.0,0.0,10\nhinf,5,3.5,0.1,10\n")
    spec = FigureSpec(inputs=(str(q),), kind="tube-plot",
                      output=str(tmp_path / "s.png"))
    assert render(spec) == str(tmp_path / "s.png")


def test_cli(tmp_path):
    p = tmp_path / "pivot.csv"
    p.write_text("profile,s_1\nconstant,1.0\n")
    doc = {"figures": [{"inputs": [str(p)], "kind": "table-heatmap",
                        "output": str(tmp_path / "out" / "t.png")}]}
    spec_path = tmp_path / "spec.yaml"
    spec_path.write_text(yaml.safe_dump(doc))
    assert main([str(spec_path)]) == 0
    assert (tmp_path / "out" / "t.png").exists()
    # single-figure mapping form
    doc2 = {"inputs": [str(p)], "kind": "table-heatmap",
            "output": str(tmp_path / "t2.png")}
    single = tmp_path / "single.yaml"
    single.write_text(yaml.safe_dump(doc2))
    assert main([str(single)]) == 0
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"figures": []}))
    assert main([str(bad)]) == 2
    missing = tmp_path / "missing.yaml"
    missing.write_text(yaml.safe_dump(
        {"inputs": [str(tmp_path / "nope.csv")], "kind": "table-heatmap",
         "output": str(tmp_path / "x.png")}))
    assert main([str(missing)]) == 2

    # schema mismatch propagates as exit 2 and names the missing columns
    junk = tmp_path / "junk.csv"
    junk.write_text("a,b\n1,2\n")
    wrong = tmp_path / "wrong.yaml"
    wrong.write_text(yaml.safe_dump(
        {"inputs": [str(junk)], "kind": "tube-plot",
         "output": str(tmp_path / "y.png")}))
    assert main([str(wrong)]) == 2


def test_spec_file_parsing_errors(tmp_path):
    lst = tmp_path / "list.yaml"
    lst.write_text("- 1\n- 2\n")
    with pytest.raises(ValueError):
        load_spec(str(lst))
