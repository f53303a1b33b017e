"""Harness tests: config handling, CSV emission, commands, CLI."""

import os
import time

import numpy as np
import pytest
import yaml

from regreth.bench import (CSV_HEADER, SWEEP_HEADER, BenchRow, ConfigError,
                           ExperimentConfig, aggregate_sweep, build_run_specs,
                           cmd_rpi, cmd_synth, cmd_table1, cmd_verify,
                           execute, pivot_mean, profile_label, resolve_preset,
                           sinusoid_sweeps, write_pivot_csv, write_runs_csv,
                           write_sweep_csv)
from regreth.cli import main


def scalar_cfg(**over):
    base = dict(plant="scalar", T=1, N=8, s_list=(1,),
                objectives=("regret_fixed_gamma",),
                profiles=("constant", "gaussian"), seeds=2,
                gamma_mode="fixed")
    base.update(over)
    return ExperimentConfig(**base)


def test_csv_header_pinned():
    assert CSV_HEADER == ("objective,profile,s,seed,J_total,w_energy,J_bar,"
                          "feasible,gamma_max,runtime_s")
    assert SWEEP_HEADER == "objective,s,J_bar_mean,J_bar_std,runs"


def test_bench_row_formatting():
    row = BenchRow(objective="h2", profile="constant", s=1, seed=3,
                   J_total=1.0 / 3.0, w_energy=8.0, J_bar=1.0 / 24.0,
                   feasible=True, gamma_max=np.nan, runtime_s=0.5)
    parts = row.csv_line().split(",")
    assert len(parts) == CSV_HEADER.count(",") + 1
    # 17 significant digits round-trip the double exactly
    assert float(parts[4]) == 1.0 / 3.0
    assert parts[7] == "1"
    bad = BenchRow(objective="h2", profile="c", s=1, seed=0, J_total=0.0,
                   w_energy=0.0, J_bar=np.nan, feasible=False,
                   gamma_max=np.nan, runtime_s=0.0)
    assert bad.csv_line().split(",")[7] == "0"


def test_profile_label():
    assert profile_label("constant") == "constant"
    lab = profile_label("sin", {"phi": 0.0, "omega": 0.15708})
    assert lab == "sin[omega=0.15708;phi=0]"


def test_config_round_trip(tmp_path):
    cfg = scalar_cfg(profiles=("constant",
                               {"kind": "sin", "params": {"omega": 0.2}}),
                     out_dir=str(tmp_path))
    path = tmp_path / "cfg.yaml"
    cfg.save(path)
    again = ExperimentConfig.from_file(path)
    assert again == cfg
    assert again.profiles == (("constant", ()), ("sin", (("omega", 0.2),)))


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping({"plantt": "paper"})
    with pytest.raises(ConfigError):
        scalar_cfg(profiles=()).validate()
    with pytest.raises(ConfigError):
        scalar_cfg(s_list=(2,)).validate()  # outside [1, T=1]
    with pytest.raises(ConfigError):
        scalar_cfg(objectives=("lqg",)).validate()
    with pytest.raises(ConfigError):
        scalar_cfg(profiles=("pink",)).validate()
    with pytest.raises(ConfigError):
        scalar_cfg(seeds=0).validate()
    with pytest.raises(ConfigError):
        scalar_cfg(gamma_mode="annealed").validate()
    with pytest.raises(ConfigError):
        scalar_cfg(plant="no/such/file.yaml").validate()
    with pytest.raises(ConfigError):
        scalar_cfg(plant=3).validate()


def test_build_run_specs_dedup():
    cfg = ExperimentConfig(plant="scalar", T=2, N=8, s_list=(1, 2),
                           objectives=("regret_fixed_gamma", "h2"),
                           profiles=("gaussian", "constant"), seeds=3)
    specs = build_run_specs(cfg)
    # regret: gaussian 3 seeds x 2 strides + constant 1 spec x 2 strides;
    # h2 collapses to s=1: gaussian 3 + constant 1
    assert len(specs) == 6 + 2 + 3 + 1
    const = [sp for sp in specs if sp.kind == "constant"]
    assert all(sp.seeds == (0, 1, 2) for sp in const)
    assert {sp.s for sp in specs if sp.objective == "h2"} == {1}
    rows = sum(len(sp.seeds) for sp in specs)
    assert rows == 2 * len(cfg.s_list) * cfg.seeds + 2 * cfg.seeds


def test_execute_validates_before_solving():
    t0 = time.perf_counter()
    with pytest.raises(ConfigError):
        execute(ExperimentConfig(plant="paper", profiles=()))
    assert time.perf_counter() - t0 < 1.0  # no preset was built


def test_execute_deterministic_rows():
    cfg = scalar_cfg()
    rows1, prob1 = execute(cfg)
    rows2, prob2 = execute(cfg)
    assert not prob1 and not prob2
    strip = lambda r: (r.objective, r.profile, r.s, r.seed, r.J_total,
                       r.w_energy, r.J_bar, r.feasible, r.gamma_max)
    assert [strip(r) for r in rows1] == [strip(r) for r in rows2]
    assert [r.sort_key for r in rows1] == sorted(r.sort_key for r in rows1)
    # one row per (objective, profile, s, seed)
    assert len({r.sort_key for r in rows1}) == len(rows1) == 4


def test_execute_parallel_matches_serial():
    cfg = scalar_cfg()
    rows1, _ = execute(cfg, jobs=1)
    rows2, _ = execute(cfg, jobs=2)
    strip = lambda r: (r.objective, r.profile, r.s, r.seed, r.J_total,
                       r.w_energy, r.J_bar, r.feasible, r.gamma_max)
    assert [strip(r) for r in rows1] == [strip(r) for r in rows2]


def _rows(objective, profile, svals, seed_vals):
    out = []
    for s in svals:
        for seed, v in enumerate(seed_vals):
            out.append(BenchRow(objective=objective, profile=profile, s=s,
                                seed=seed, J_total=v * s, w_energy=1.0,
                                J_bar=v * s, feasible=True, gamma_max=1.0,
                                runtime_s=0.0))
    return out


def test_pivot_mean_and_csv(tmp_path):
    rows = _rows("regret_fixed_gamma", "constant", [1, 2], [2.0, 4.0]) \
        + _rows("regret_fixed_gamma", "ramp", [1, 2], [1.0]) \
        + _rows("h2", "constant", [1], [5.0])
    profiles, svals, means = pivot_mean(rows, "regret_fixed_gamma")
    assert profiles == ["constant", "ramp"] and svals == [1, 2]
    assert means[("constant", 1)] == 3.0
    assert means[("constant", 2)] == 6.0
    path = write_pivot_csv(tmp_path / "p.csv", rows, "regret_fixed_gamma")
    lines = open(path).read().splitlines()
    assert lines[0] == "profile,s_1,s_2"
    assert lines[1].startswith("constant,3,")
    # the h2 pivot only ever has the single s=1 column
    write_pivot_csv(tmp_path / "h2.csv", rows, "h2")
    assert open(tmp_path / "h2.csv").read().splitlines()[0] == "profile,s_1"


def test_runs_csv_written_sorted(tmp_path):
    rows = _rows("h2", "constant", [1], [5.0, 2.0])
    path = write_runs_csv(tmp_path / "runs.csv", rows[::-1])
    lines = open(path).read().splitlines()
    assert lines[0] == CSV_HEADER
    assert len(lines) == 3
    assert lines[1].split(",")[3] == "0"  # seed order restored


def test_aggregate_sweep_population_std(tmp_path):
    rows = _rows("h2", "a", [1], [1.0]) + _rows("h2", "b", [1], [3.0])
    agg = aggregate_sweep(rows)
    assert agg == [("h2", 1, 2.0, 1.0, 2)]
    single = aggregate_sweep(_rows("h2", "a", [1], [4.0]))
    assert single[0][3] == 0.0  # degenerate sweep: zero std
    path = write_sweep_csv(tmp_path / "s.csv", agg)
    lines = open(path).read().splitlines()
    assert lines[0] == SWEEP_HEADER
    assert lines[1] == "h2,1,2,1,2"


def test_sinusoid_sweep_grids():
    panels = dict(sinusoid_sweeps(ExperimentConfig(N=60)))
    omegas = [dict(p[1])["omega"] for p in panels["omega"]]
    assert len(omegas) == 10
    assert abs(omegas[0] - 0.1571) <= 5e-4
    assert abs(omegas[-1] - 0.6283) <= 5e-4
    phis = [dict(p[1])["phi"] for p in panels["phi"]]
    assert phis[0] == 0.0 and abs(phis[-1] - 2 * np.pi) <= 1e-12
    assert all(dict(p[1])["omega"] == omegas[0] for p in panels["phi"])


def test_resolve_preset_custom_plant_file(tmp_path):
    plant = {"A": [[0.5]], "B": [[1.0]], "x0": [0.2], "x_bound": 5.0,
             "u_bound": 5.0, "w_bound": 1.0, "name": "toy"}
    path = tmp_path / "plant.yaml"
    path.write_text(yaml.safe_dump(plant))
    cfg = ExperimentConfig(plant=str(path), T=2, N=4, s_list=(1,),
                           objectives=("regret_fixed_gamma",),
                           profiles=("constant",), seeds=1)
    preset = resolve_preset(cfg)
    assert preset.name == "toy"
    assert preset.model.A[0, 0] == 0.5
    assert preset.x0[0] == 0.2
    assert resolve_preset(cfg) is preset  # cached


def test_cmd_table1_scalar(tmp_path):
    msgs = []
    cfg = scalar_cfg(objectives=("regret_fixed_gamma", "h2"),
                     profiles=("constant",), out_dir=str(tmp_path))
    rc = cmd_table1(cfg, echo=msgs.append)
    assert rc == 0
    runs = tmp_path / "table1_runs.csv"
    assert runs.exists()
    lines = runs.read_text().splitlines()
    assert lines[0] == CSV_HEADER
    assert len(lines) == 1 + 2 * cfg.seeds
    for line in lines[1:]:
        parts = line.split(",")
        J, E, Jbar = float(parts[4]), float(parts[5]), float(parts[6])
        assert abs(Jbar - J / E) <= 1e-12 * max(1.0, abs(Jbar))
        assert parts[7] == "1"
    for objective in cfg.objectives:
        assert (tmp_path / ("table1_pivot_%s.csv" % objective)).exists()
    assert any(m.startswith("wrote ") for m in msgs)


def test_cmd_verify_scalar_under_ten_seconds():
    t0 = time.perf_counter()
    msgs = []
    rc = cmd_verify(scalar_cfg(), echo=msgs.append)
    elapsed = time.perf_counter() - t0
    assert rc == 0
    assert elapsed < 10.0
    assert sum(m.startswith("[PASS]") for m in msgs) >= 10
    assert not any(m.startswith("[FAIL]") for m in msgs)


def test_cmd_synth_writes_plans(tmp_path):
    msgs = []
    cfg = scalar_cfg(objectives=("regret_fixed_gamma", "h2", "hinf"),
                     out_dir=str(tmp_path))
    rc = cmd_synth(cfg, echo=msgs.append)
    assert rc == 0
    for objective in cfg.objectives:
        path = tmp_path / ("synth_%s.npz" % objective)
        assert path.exists()
        data = np.load(path)
        assert {"x0", "gamma", "value", "v0x", "v0u",
                "Phi_xw", "Phi_uw"} <= set(data.files)


def test_cmd_rpi_dump(tmp_path):
    msgs = []
    rc = cmd_rpi(scalar_cfg(out_dir=str(tmp_path)), echo=msgs.append)
    assert rc == 0
    assert (tmp_path / "rpi_set.csv").exists()
    assert any("invariance certificate" in m for m in msgs)


def test_cli_exit_codes(tmp_path):
    cfg_path = tmp_path / "cfg.yaml"
    scalar_cfg(out_dir=str(tmp_path / "out")).save(cfg_path)
    assert main(["verify", "--config", str(cfg_path)]) == 0
    bad = tmp_path / "bad.yaml"
    bad.write_text("plant: scalar\nwhatever: 3\n")
    assert main(["verify", "--config", str(bad)]) == 2
    assert main(["verify", "--config", str(tmp_path / "nope.yaml")]) == 2


def test_cli_out_flag_overrides(tmp_path):
    cfg_path = tmp_path / "cfg.yaml"
    scalar_cfg(profiles=("constant",), out_dir=str(tmp_path / "a")).save(
        cfg_path)
    rc = main(["table1", "--config", str(cfg_path),
               "--out", str(tmp_path / "b")])
    assert rc == 0
    assert (tmp_path / "b" / "table1_runs.csv").exists()
    assert not (tmp_path / "a").exists()
