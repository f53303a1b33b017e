"""Experiment harness: configs, benchmark tables, sweeps, and verification.

Runs are described by an ExperimentConfig (loadable from a YAML manifest),
dispatched to a worker pool, and emitted as CSV rows with a fixed header so
downstream tooling can consume them without touching this package.
"""

from __future__ import annotations

import logging
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial

import numpy as np
import yaml

from .clairvoyant import check_monotonicity
from .invariant import RpiResult, rpi_certificate
from .lti import Polytope
from .presets import Preset, custom_preset, paper_preset, scalar_preset
from .simulate import (DETERMINISTIC_KINDS, PROFILE_KINDS, DisturbanceProfile,
                       dissipation_residuals, fixed_gamma_level,
                       max_safety_violation, receding_horizon_run)
from .terminal import dare_residual, dissipation_gap

log = logging.getLogger("regreth.bench")

CSV_HEADER = ("objective,profile,s,seed,J_total,w_energy,J_bar,"
              "feasible,gamma_max,runtime_s")
SWEEP_HEADER = "objective,s,J_bar_mean,J_bar_std,runs"
OBJECTIVES = ("regret_fixed_gamma", "h2", "hinf")
GAMMA_MODES = ("fixed", "per_replan_bisection")
SAFETY_TOL = 1e-6


class ConfigError(ValueError):
    """Raised when an experiment config fails validation."""


def _fmt(x):
    return "%.17g" % float(x)


def profile_label(kind, params=None):
    """CSV-safe label, e.g. sin[omega=0.15708,phi=0]."""
    params = dict(params or {})
    if not params:
        return kind
    inner = ";".join("%s=%.6g" % (k, params[k]) for k in sorted(params))
    return "%s[%s]" % (kind, inner)


def _norm_profile(entry):
    """Normalize a config profile entry to (kind, ((name, value), ...))."""
    if isinstance(entry, str):
        kind, params = entry, {}
    elif isinstance(entry, dict):
        kind = entry.get("kind")
        params = entry.get("params") or {}
    elif isinstance(entry, (tuple, list)) and len(entry) == 2:
        kind, params = entry
    else:
        raise ConfigError("bad profile entry %r" % (entry,))
    items = tuple(sorted((str(k), float(v)) for k, v in dict(params).items()))
    return (str(kind), items)


def _default_profiles():
    return tuple((k, ()) for k in PROFILE_KINDS)


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment manifest; round-trips losslessly through YAML."""

    plant: object = "paper"  # "paper" | "scalar" | path | inline mapping
    T: int = 20
    N: int = 60
    s_list: tuple = (1, 2, 5)
    objectives: tuple = OBJECTIVES
    profiles: tuple = field(default_factory=_default_profiles)
    seeds: int = 10
    gamma_mode: str = "fixed"
    gamma_tol: float = 1e-3
    solver_eps: float = 1e-4
    out_dir: str = "bench_out"

    def __post_init__(self):
        object.__setattr__(self, "s_list", tuple(int(s) for s in self.s_list))
        object.__setattr__(self, "objectives",
                           tuple(str(o) for o in self.objectives))
        object.__setattr__(self, "profiles",
                           tuple(_norm_profile(p) for p in self.profiles))

    def validate(self):
        if isinstance(self.plant, str):
            if self.plant not in ("paper", "scalar") \
                    and not os.path.exists(self.plant):
                raise ConfigError("plant %r is not a preset name or a file"
                                  % self.plant)
        elif not isinstance(self.plant, dict):
            raise ConfigError("plant must be a name, a path, or a mapping")
        if self.T < 1 or self.N < 1:
            raise ConfigError("horizons must be positive (T=%s, N=%s)"
                              % (self.T, self.N))
        if not self.s_list:
            raise ConfigError("s_list is empty")
        for s in self.s_list:
            if not 1 <= s <= self.T:
                raise ConfigError("stride s=%d outside [1, T=%d]"
                                  % (s, self.T))
        if not self.objectives:
            raise ConfigError("objective list is empty")
        for obj in self.objectives:
            if obj not in OBJECTIVES:
                raise ConfigError("unknown objective %r (have: %s)"
                                  % (obj, ", ".join(OBJECTIVES)))
        if not self.profiles:
            raise ConfigError("profile list is empty")
        for kind, _ in self.profiles:
            if kind not in PROFILE_KINDS:
                raise ConfigError("unknown profile kind %r (have: %s)"
                                  % (kind, ", ".join(PROFILE_KINDS)))
        if self.seeds < 1:
            raise ConfigError("seeds must be >= 1")
        if self.gamma_mode not in GAMMA_MODES:
            raise ConfigError("gamma_mode must be one of %s"
                              % (GAMMA_MODES,))
        if not (self.gamma_tol > 0 and self.solver_eps > 0):
            raise ConfigError("tolerances must be positive")
        return self

    def to_mapping(self):
        profs = []
        for kind, items in self.profiles:
            if items:
                profs.append({"kind": kind, "params": dict(items)})
            else:
                profs.append(kind)
        plant = dict(self.plant) if isinstance(self.plant, dict) \
            else self.plant
        return {"plant": plant, "T": self.T, "N": self.N,
                "s_list": list(self.s_list),
                "objectives": list(self.objectives),
                "profiles": profs, "seeds": self.seeds,
                "gamma_mode": self.gamma_mode, "gamma_tol": self.gamma_tol,
                "solver_eps": self.solver_eps, "out_dir": self.out_dir}

    @classmethod
    def from_mapping(cls, mapping):
        mapping = dict(mapping or {})
        known = {"plant", "T", "N", "s_list", "objectives", "profiles",
                 "seeds", "gamma_mode", "gamma_tol", "solver_eps", "out_dir"}
        unknown = set(mapping) - known
        if unknown:
            raise ConfigError("unknown config keys: %s"
                              % ", ".join(sorted(unknown)))
        return cls(**mapping)

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_mapping(yaml.safe_load(fh))

    def save(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_mapping(), fh, sort_keys=False)


@dataclass(frozen=True)
class BenchRow:
    """One CSV row: a single closed-loop run under one seed."""

    objective: str
    profile: str
    s: int
    seed: int
    J_total: float
    w_energy: float
    J_bar: float
    feasible: bool
    gamma_max: float
    runtime_s: float

    def csv_line(self):
        return ",".join([
            self.objective, self.profile, str(self.s), str(self.seed),
            _fmt(self.J_total), _fmt(self.w_energy), _fmt(self.J_bar),
            "1" if self.feasible else "0",
            _fmt(self.gamma_max), _fmt(self.runtime_s)])

    @property
    def sort_key(self):
        return (self.objective, self.profile, self.s, self.seed)


@dataclass(frozen=True)
class RunSpec:
    """One closed-loop solve; deterministic profiles share it across seeds."""

    objective: str
    kind: str
    params: tuple
    s: int
    seeds: tuple


def build_run_specs(cfg: ExperimentConfig):
    """Expand a config into independent work units.

    The h2 objective collapses to s=1 (its replan solution coincides with
    the unconstrained optimal gain almost immediately, so the sweep is
    uninformative).  Deterministic profiles ignore the seed, so all seeds
    share one solve and the row is replicated.
    """
    specs = []
    all_seeds = tuple(range(cfg.seeds))
    for objective in cfg.objectives:
        s_vals = (1,) if objective == "h2" else cfg.s_list
        for kind, params in cfg.profiles:
            for s in s_vals:
                if kind in DETERMINISTIC_KINDS:
                    specs.append(RunSpec(objective, kind, params, s,
                                         all_seeds))
                else:
                    specs.extend(RunSpec(objective, kind, params, s, (seed,))
                                 for seed in all_seeds)
    return specs


# per-process caches; fork()ed workers inherit whatever the parent built
_PRESETS = {}
_GAMMA_BARS = {}


def _plant_key(cfg):
    plant = cfg.plant
    return repr(sorted(plant.items())) if isinstance(plant, dict) else plant


def resolve_preset(cfg: ExperimentConfig) -> Preset:
    key = (_plant_key(cfg), cfg.T, cfg.N, cfg.gamma_tol)
    if key in _PRESETS:
        return _PRESETS[key]
    if cfg.plant == "paper":
        preset = paper_preset(T=cfg.T, N=cfg.N, gamma_tol=cfg.gamma_tol)
    elif cfg.plant == "scalar":
        preset = scalar_preset(T=cfg.T, N=cfg.N)
    else:
        plant = cfg.plant
        if isinstance(plant, str):
            with open(plant) as fh:
                plant = yaml.safe_load(fh)
        preset = custom_preset(plant, T=cfg.T, N=cfg.N,
                               gamma_tol=cfg.gamma_tol)
    _PRESETS[key] = preset
    return preset


def _gamma_bar_for(cfg, preset):
    key = (_plant_key(cfg), cfg.T, cfg.N, cfg.gamma_tol)
    if key not in _GAMMA_BARS:
        eng = preset.engine("regret_fixed_gamma")
        eng.reset()
        _GAMMA_BARS[key] = fixed_gamma_level(
            eng, preset.x0, preset.terminal.gamma_f, tol=cfg.gamma_tol)
        log.info("gamma_bar(x0) = %.6g", _GAMMA_BARS[key])
    return _GAMMA_BARS[key]


def run_spec(cfg: ExperimentConfig, spec: RunSpec):
    """Execute one work unit; returns (rows, problem strings)."""
    preset = resolve_preset(cfg)
    label = profile_label(spec.kind, dict(spec.params))
    gamma_bar = None
    if spec.objective == "regret_fixed_gamma" and cfg.gamma_mode == "fixed":
        gamma_bar = _gamma_bar_for(cfg, preset)
    prof = DisturbanceProfile(spec.kind, preset.W_stage, seed=spec.seeds[0],
                              params=dict(spec.params))
    # each run starts from a cold solver state: the CSV must be bit-identical
    # for a given config regardless of run order, job count, or scheduling
    preset.reset_engines()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        trace = receding_horizon_run(preset, spec.objective, prof, spec.s,
                                     gamma_mode=cfg.gamma_mode,
                                     gamma_bar=gamma_bar)
    tag = "objective=%s profile=%s s=%d" % (spec.objective, label, spec.s)
    problems = []
    violation = max_safety_violation(trace, preset.Z_stage)
    if not trace.success:
        problems.append("run failed (%s): %s" % (tag, trace.failure_reason))
    elif violation > SAFETY_TOL:
        problems.append("safety violation %.3g > %.1g (%s)"
                        % (violation, SAFETY_TOL, tag))
    if trace.ledger is not None and not trace.ledger.satisfied:
        problems.append("regret ledger bound violated by %.3g (%s)"
                        % (trace.ledger.regret_sum - trace.ledger.bound,
                           tag))
    log.info("%s J_bar=%.4f gamma_max=%.4g runtime=%.2fs", tag, trace.J_bar,
             trace.gamma_bar, trace.runtime_s)
    rows = [BenchRow(objective=spec.objective, profile=label, s=spec.s,
                     seed=seed, J_total=trace.J_N, w_energy=trace.w_energy,
                     J_bar=trace.J_bar, feasible=trace.success,
                     gamma_max=trace.gamma_bar, runtime_s=trace.runtime_s)
            for seed in spec.seeds]
    return rows, problems


def execute(cfg: ExperimentConfig, jobs=1):
    """Run every work unit in the config; returns (sorted rows, problems)."""
    cfg.validate()
    specs = build_run_specs(cfg)
    rows, problems = [], []
    if jobs > 1:
        # build the shared, expensive state before forking
        preset = resolve_preset(cfg)
        if "regret_fixed_gamma" in cfg.objectives \
                and cfg.gamma_mode == "fixed":
            _gamma_bar_for(cfg, preset)
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for r, p in pool.map(partial(run_spec, cfg), specs):
                rows.extend(r)
                problems.extend(p)
    else:
        for spec in specs:
            r, p = run_spec(cfg, spec)
            rows.extend(r)
            problems.extend(p)
    return sorted(rows, key=lambda r: r.sort_key), problems


def write_runs_csv(path, rows):
    rows = sorted(rows, key=lambda r: r.sort_key)
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(row.csv_line() + "\n")
    return path


def pivot_mean(rows, objective):
    """Mean J_bar over seeds: (profile labels, s values, {(p, s): mean})."""
    sub = [r for r in rows if r.objective == objective]
    profiles = list(dict.fromkeys(r.profile for r in sub))
    svals = sorted({r.s for r in sub})
    cells = {}
    for r in sub:
        cells.setdefault((r.profile, r.s), []).append(r.J_bar)
    means = {k: float(np.mean(v)) for k, v in cells.items()}
    return profiles, svals, means


def write_pivot_csv(path, rows, objective):
    profiles, svals, means = pivot_mean(rows, objective)
    with open(path, "w") as fh:
        fh.write("profile," + ",".join("s_%d" % s for s in svals) + "\n")
        for p in profiles:
            cells = [_fmt(means.get((p, s), np.nan)) for s in svals]
            fh.write(",".join([p] + cells) + "\n")
    return path


def _constant_trend(rows):
    """Mean regret J_bar on the constant profile per s, low to high s."""
    sub = [r for r in rows
           if r.objective == "regret_fixed_gamma" and r.profile == "constant"]
    if not sub:
        return None
    svals = sorted({r.s for r in sub})
    if len(svals) < 2:
        return None
    means = []
    for s in svals:
        means.append(float(np.mean([r.J_bar for r in sub if r.s == s])))
    return svals, means


def _ensure_out(out_dir):
    os.makedirs(out_dir, exist_ok=True)
    return out_dir


def cmd_table1(cfg: ExperimentConfig, jobs=1, out_dir=None, echo=print):
    """Per-run CSV plus one pivot per objective (mean J_bar over seeds)."""
    out = _ensure_out(out_dir or cfg.out_dir)
    t0 = time.perf_counter()
    rows, problems = execute(cfg, jobs=jobs)
    written = [write_runs_csv(os.path.join(out, "table1_runs.csv"), rows)]
    for objective in cfg.objectives:
        written.append(write_pivot_csv(
            os.path.join(out, "table1_pivot_%s.csv" % objective),
            rows, objective))
    for path in written:
        echo("wrote %s" % path)
    trend = _constant_trend(rows)
    if trend is not None:
        svals, means = trend
        decreasing = all(b <= a for a, b in zip(means, means[1:]))
        echo("[%s] regret constant-1 J_bar monotone decreasing in s: %s"
             % ("PASS" if decreasing else "WARN",
                " ".join("s=%d:%.4f" % sv for sv in zip(svals, means))))
    for msg in problems:
        echo("[FAIL] %s" % msg)
    echo("table1: %d runs, %d rows, %d failures, %.1fs"
         % (len(build_run_specs(cfg)), len(rows), len(problems),
            time.perf_counter() - t0))
    return 1 if problems else 0


def sinusoid_sweeps(cfg: ExperimentConfig):
    """The two Figure-2 panels: 10 phases at the base frequency, then 10
    frequencies at zero phase, equally spaced per the benchmark setup."""
    lo = 3 * math.pi / cfg.N
    hi = 12 * math.pi / cfg.N
    phis = np.linspace(0.0, 2 * math.pi, 10)
    omegas = np.linspace(lo, hi, 10)
    phi_profiles = tuple(
        ("sin", (("omega", float(lo)), ("phi", float(p)))) for p in phis)
    omega_profiles = tuple(
        ("sin", (("omega", float(w)), ("phi", 0.0))) for w in omegas)
    return (("phi", phi_profiles), ("omega", omega_profiles))


def aggregate_sweep(rows):
    """Mean/std of J_bar per (objective, s) across the swept profiles."""
    groups = {}
    for r in rows:
        groups.setdefault((r.objective, r.s), []).append(r.J_bar)
    agg = []
    for (objective, s) in sorted(groups):
        vals = np.asarray(groups[(objective, s)], dtype=float)
        agg.append((objective, s, float(vals.mean()),
                    float(vals.std()), vals.size))
    return agg


def write_sweep_csv(path, agg):
    with open(path, "w") as fh:
        fh.write(SWEEP_HEADER + "\n")
        for objective, s, mean, std, count in agg:
            fh.write(",".join([objective, str(s), _fmt(mean), _fmt(std),
                               str(count)]) + "\n")
    return path


def cmd_figure2(cfg: ExperimentConfig, jobs=1, out_dir=None, echo=print):
    """Sinusoid sweeps: per-panel raw runs plus mean/std per (objective, s)."""
    out = _ensure_out(out_dir or cfg.out_dir)
    t0 = time.perf_counter()
    problems = []
    for panel, profiles in sinusoid_sweeps(cfg):
        # the sweep replaces the profile list; sinusoids are deterministic,
        # so a single seed covers them
        pcfg = replace(cfg, profiles=profiles, seeds=1)
        rows, probs = execute(pcfg, jobs=jobs)
        problems.extend(probs)
        raw = write_runs_csv(
            os.path.join(out, "figure2_%s_runs.csv" % panel), rows)
        agg = write_sweep_csv(os.path.join(out, "figure2_%s.csv" % panel),
                              aggregate_sweep(rows))
        echo("wrote %s" % raw)
        echo("wrote %s" % agg)
    for msg in problems:
        echo("[FAIL] %s" % msg)
    echo("figure2: %d failures, %.1fs"
         % (len(problems), time.perf_counter() - t0))
    return 1 if problems else 0


def _shrunk_terminal(preset: Preset, factor=0.5):
    """Doctored preset whose terminal set is scaled until it is not RPI."""
    bad = Polytope(preset.rpi.set.H, preset.rpi.set.h * factor)
    bad_rpi = RpiResult(set=bad, alpha=preset.rpi.alpha,
                        s_steps=preset.rpi.s_steps,
                        epsilon=preset.rpi.epsilon)
    # short horizon: the doctored engine is built from scratch, and the
    # loop only needs to reach its first (infeasible) replan
    T = min(preset.T, 6)
    N = min(preset.N, 3 * T)
    return replace(preset, T=T, N=N, Zf=bad, rpi=bad_rpi,
                   _stacks={}, _engines={}, _C=None)


def cmd_verify(cfg: ExperimentConfig, jobs=1, out_dir=None, echo=print):
    """Certificate report: PASS/FAIL lines with margins; 0 iff all pass."""
    cfg.validate()
    t0 = time.perf_counter()
    preset = resolve_preset(cfg)
    model = preset.model
    ing = preset.terminal
    checks = []

    def record(name, ok, detail):
        checks.append((name, bool(ok), detail))

    rep = check_monotonicity(model, T=min(preset.T, 4))
    margin = min(v for k, v in rep.items() if k != "all_pass")
    record("clairvoyant cost monotonicity", rep["all_pass"],
           "min margin %.3g" % margin)

    res = dare_residual(model, ing.P, ing.Pbar)
    record("terminal Riccati residual", res <= 1e-8, "residual %.3g" % res)

    A_f = model.A + model.B @ ing.K_f
    rho = max(abs(np.linalg.eigvals(A_f)))
    record("terminal gain stabilizing", rho < 1.0,
           "spectral radius %.6g" % rho)

    rng = np.random.default_rng(0)
    w_grid = rng.uniform(-1.0, 1.0, size=(64, model.n))
    gap = -np.inf
    for _ in range(200):
        x = rng.standard_normal(model.n)
        gap = max(gap, dissipation_gap(model, ing, x, w_grid))
    record("terminal cost dissipation", gap <= 1e-6,
           "max gap %.3g over 200 states" % gap)

    worst = rpi_certificate(preset.rpi, A_f, preset.W_stage)
    record("terminal set robust invariance", worst <= 1e-8,
           "worst facet violation %.3g" % worst)

    adm = float(preset.admissibility.margins.min())
    record("terminal set constraint admissibility",
           preset.admissibility.admissible, "min margin %.3g" % adm)

    # negative control: a shrunk terminal set must be caught, first by the
    # invariance certificate, then by the closed loop going infeasible
    bad = _shrunk_terminal(preset)
    bad_worst = rpi_certificate(bad.rpi, A_f, preset.W_stage)
    record("negative control: shrunk set fails invariance", bad_worst > 1e-8,
           "violation %.3g (expected failure)" % bad_worst)
    prof = DisturbanceProfile("constant", preset.W_stage)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        # pin gamma so the failure surfaces at the replan, not in the
        # level search
        bad_trace = receding_horizon_run(bad, "regret_fixed_gamma", prof, 1,
                                         gamma_mode="fixed",
                                         gamma_bar=2.0 * ing.gamma_f,
                                         ledger=False)
    record("negative control: shrunk set breaks the loop", bad_trace.failed,
           "failure reason: %s" % (bad_trace.failure_reason or "none"))

    fuzz_specs = [("gaussian", seed) for seed in range(min(cfg.seeds, 3))]
    fuzz_specs.append(("constant", 0))
    s_fuzz = max(cfg.s_list)
    worst_violation, worst_slack = -np.inf, np.inf
    fuzz_ok, ledger_ok = True, True
    gamma_bar = _gamma_bar_for(cfg, preset) if cfg.gamma_mode == "fixed" \
        else None
    last_trace = None
    for kind, seed in fuzz_specs:
        prof = DisturbanceProfile(kind, preset.W_stage, seed=seed)
        trace = receding_horizon_run(preset, "regret_fixed_gamma", prof,
                                     s_fuzz, gamma_mode=cfg.gamma_mode,
                                     gamma_bar=gamma_bar)
        fuzz_ok &= trace.success
        worst_violation = max(worst_violation,
                              max_safety_violation(trace, preset.Z_stage))
        if trace.ledger is not None:
            ledger_ok &= trace.ledger.satisfied
            worst_slack = min(worst_slack,
                              trace.ledger.bound - trace.ledger.regret_sum)
        last_trace = trace
    record("feasibility fuzz (%d runs, s=%d)" % (len(fuzz_specs), s_fuzz),
           fuzz_ok and worst_violation <= SAFETY_TOL,
           "max safety violation %.3g" % worst_violation)
    record("regret ledger bound", ledger_ok, "min slack %.3g" % worst_slack)

    eng = preset.engine("regret_fixed_gamma")
    resid = dissipation_residuals(eng, last_trace,
                                  steps=range(min(5, preset.N)))
    record("closed-loop dissipation", max(resid) <= 1e-4,
           "max residual %.3g over %d steps" % (max(resid), len(resid)))

    all_ok = True
    for name, ok, detail in checks:
        all_ok &= ok
        echo("[%s] %s (%s)" % ("PASS" if ok else "FAIL", name, detail))
    echo("verify: %d/%d certificates pass, %.1fs"
         % (sum(ok for _, ok, _ in checks), len(checks),
            time.perf_counter() - t0))
    return 0 if all_ok else 1


def cmd_synth(cfg: ExperimentConfig, jobs=1, out_dir=None, echo=print):
    """One-shot synthesis at x0 for each configured objective."""
    cfg.validate()
    preset = resolve_preset(cfg)
    out = _ensure_out(out_dir or cfg.out_dir)
    m = preset.model.m
    failures = 0
    for objective in cfg.objectives:
        eng = preset.engine(objective)
        try:
            if objective == "regret_fixed_gamma":
                gamma = _gamma_bar_for(cfg, preset) \
                    if cfg.gamma_mode == "fixed" \
                    else max(eng.min_gamma(preset.x0, tol=cfg.gamma_tol),
                             preset.terminal.gamma_f)
                plan = eng.plan(preset.x0, gamma)
            else:
                plan = eng.plan(preset.x0)
        except Exception as exc:  # noqa: BLE001 - report and keep going
            echo("%s: synthesis failed: %s" % (objective, exc))
            failures += 1
            continue
        u0 = plan.v0u[:m]
        echo("%s: gamma=%s value=%.6g violation=%.3g iters=%d time=%.2fs"
             % (objective,
                "n/a" if np.isnan(plan.gamma) else "%.6g" % plan.gamma,
                plan.value, plan.violation, plan.iters, plan.solve_time))
        echo("%s: u0 = %s" % (objective, np.array2string(u0, precision=6)))
        path = os.path.join(out, "synth_%s.npz" % objective)
        np.savez(path, x0=preset.x0, gamma=plan.gamma, value=plan.value,
                 violation=plan.violation, v0x=plan.v0x, v0u=plan.v0u,
                 Phi_xw=plan.Phi_xw, Phi_uw=plan.Phi_uw)
        echo("wrote %s" % path)
    return 1 if failures else 0


def cmd_rpi(cfg: ExperimentConfig, jobs=1, out_dir=None, echo=print):
    """Terminal-set computation dump: level, invariance, admissibility."""
    cfg.validate()
    preset = resolve_preset(cfg)
    out = _ensure_out(out_dir or cfg.out_dir)
    ing, rpi = preset.terminal, preset.rpi
    model = preset.model
    A_f = model.A + model.B @ ing.K_f
    worst = rpi_certificate(rpi, A_f, preset.W_stage)
    adm = float(preset.admissibility.margins.min())
    echo("gamma_f = %.10g (bisection tol %.1g)" % (ing.gamma_f,
                                                   preset.gamma_tol))
    echo("P eigenvalues: %s"
         % np.array2string(np.linalg.eigvalsh(ing.P), precision=6))
    echo("K_f = %s" % np.array2string(ing.K_f, precision=6))
    echo("mRPI outer approximation: %d facets, alpha=%.6g, s=%d, eps=%.3g"
         % (rpi.set.nrows, rpi.alpha, rpi.s_steps, rpi.epsilon))
    echo("invariance certificate: worst facet violation %.3g" % worst)
    echo("admissibility: %s (min margin %.3g)"
         % ("PASS" if preset.admissibility.admissible else "FAIL", adm))
    path = os.path.join(out, "rpi_set.csv")
    with open(path, "w") as fh:
        cols = ["H_%d" % j for j in range(rpi.set.H.shape[1])]
        fh.write(",".join(cols + ["h"]) + "\n")
        for row, b in zip(rpi.set.H, rpi.set.h):
            fh.write(",".join(_fmt(v) for v in row) + "," + _fmt(b) + "\n")
    echo("wrote %s" % path)
    ok = preset.admissibility.admissible and worst <= 1e-8
    return 0 if ok else 1
