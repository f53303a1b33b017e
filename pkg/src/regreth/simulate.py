"""Receding-horizon closed loop.

Disturbance profile generation, the replan-every-s-steps simulation loop,
and the cost/regret bookkeeping that audits each run: the realized cost is
compared against the length-N clairvoyant benchmark and the certified
value-function bound.  Within a plan, inputs come from the synthesized
feedback policy driven by measured disturbances, not from the open-loop
nominal sequence.
"""

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .clairvoyant import clairvoyant_gain
from .lti import Polytope, SystemModel, build_stack
from .synthesis import (GAMMA_BRACKET_CAP, InfeasibleError, SolverFailure,
                        box_bounds)

PROFILE_KINDS = ("gaussian", "uniform", "constant", "ramp", "sin",
                 "step_plus_sin", "sawtooth", "stairs")

#: profile kinds whose realization ignores the seed
DETERMINISTIC_KINDS = ("constant", "ramp", "sin", "step_plus_sin",
                       "sawtooth", "stairs")


def project_into(W: Polytope, w):
    """Clip samples (rows of w) into W; exact for boxes, radial otherwise."""
    w = np.asarray(w, dtype=float)
    b = box_bounds(W)
    if b is not None:
        return np.clip(w, -b, b)
    # shrink each sample toward the origin until every row of W holds
    ratio = (w @ W.H.T) / W.h
    scale = np.maximum(ratio.max(axis=1), 1.0)
    return w / scale[:, None]


@dataclass(frozen=True)
class DisturbanceProfile:
    """A named disturbance family clipped into the stage set W."""
    kind: str
    W: Polytope
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ValueError("unknown profile kind %r (have: %s)"
                             % (self.kind, ", ".join(PROFILE_KINDS)))

    @property
    def deterministic(self):
        return self.kind in DETERMINISTIC_KINDS

    def realize(self, N):
        """(N, d) array of disturbances, deterministic given the seed."""
        n = self.W.d
        p = self.params
        t = np.arange(N, dtype=float)
        if self.kind == "gaussian":
            rng = np.random.default_rng(self.seed)
            w = rng.standard_normal((N, n))
        elif self.kind == "uniform":
            rng = np.random.default_rng(self.seed)
            w = rng.uniform(p.get("lo", 0.5), p.get("hi", 1.0), (N, n))
        elif self.kind == "constant":
            w = np.full((N, n), float(p.get("c", 1.0)))
        elif self.kind == "ramp":
            w = np.repeat(np.linspace(0.0, 1.0, N)[:, None], n, axis=1)
        elif self.kind == "sin":
            omega = p.get("omega", 3 * np.pi / N)
            phi = p.get("phi", 0.0)
            w = np.repeat(np.sin(omega * t + phi)[:, None], n, axis=1)
        elif self.kind == "step_plus_sin":
            w = np.repeat((0.5 + 0.5 * np.sin(2 * np.pi * t / 20))[:, None],
                          n, axis=1)
        elif self.kind == "sawtooth":
            period = p.get("period", 10)
            w = np.repeat(signal.sawtooth(2 * np.pi * t / period)[:, None],
                          n, axis=1)
        else:  # stairs
            width = int(p.get("width", 10))
            lvl = 0.5 * (-1.0) ** (np.floor_divide(np.arange(N), width))
            w = np.repeat(lvl[:, None], n, axis=1)
        return project_into(self.W, w)


def make_profile(kind, params, N, seed, W: Polytope):
    """Realize one profile: (N, d) array, every sample inside W."""
    return DisturbanceProfile(kind=kind, W=W, seed=seed,
                              params=dict(params or {})).realize(N)


@dataclass
class ReplanRecord:
    t: int
    gamma: float
    value: float
    violation: float
    solve_time: float
    iters: int
    feasible: bool
    tightened: bool = False


@dataclass
class RegretLedger:
    """J_N - J_N^clairvoyant - gamma_bar^2 |w|^2 against its certificate.

    The benchmark is the length-N finite-horizon clairvoyant on the realized
    disturbance; by the cost-matrix monotonicity chain it is no harder than
    the infinite-horizon one, so a bound asserted against it is conservative.
    """
    J_N: float
    J_clairvoyant: float
    w_energy: float
    gamma_bar: float
    regret_sum: float
    V0: float
    bound: float
    satisfied: bool
    note: str = ("benchmark: length-N finite-horizon clairvoyant "
                 "(valid upper proxy for the infinite-horizon policy)")


@dataclass
class SimulationTrace:
    """Everything one closed-loop run produced."""
    objective_kind: str
    s: int
    x: np.ndarray           # (N+1, n) states
    u: np.ndarray           # (N, m) inputs
    w: np.ndarray           # (N, n) disturbances
    stage_cost: np.ndarray  # (N,) |x|_Q^2 + |u|_R^2
    gamma_t: np.ndarray     # (N,) gamma in force at each step (nan for h2)
    replans: list
    failed: bool = False
    failure_state: np.ndarray = None
    failure_reason: str = ""
    runtime_s: float = 0.0
    ledger: RegretLedger = None

    @property
    def success(self):
        return not self.failed

    @property
    def J_N(self):
        return float(np.sum(self.stage_cost))

    @property
    def w_energy(self):
        return float(np.sum(self.w * self.w))

    @property
    def J_bar(self):
        e = self.w_energy
        return self.J_N / e if e > 0 else np.nan

    @property
    def replan_times(self):
        return [r.t for r in self.replans]

    @property
    def feasible_flags(self):
        return [r.feasible for r in self.replans]

    @property
    def gamma_bar(self):
        g = self.gamma_t[~np.isnan(self.gamma_t)]
        return float(g.max()) if g.size else np.nan


def max_safety_violation(trace: SimulationTrace, Z: Polytope):
    """Worst margin of H[x;u] <= h over the run (state-only rows at t=N)."""
    N = trace.u.shape[0]
    n = trace.x.shape[1]
    zu = np.hstack([trace.x[:N], trace.u])
    worst = float((zu @ Z.H.T - Z.h).max())
    state_rows = np.abs(Z.H[:, n:]).sum(axis=1) == 0
    if state_rows.any():
        fin = Z.H[state_rows, :n] @ trace.x[N] - Z.h[state_rows]
        worst = max(worst, float(fin.max()))
    return worst


_BENCH_CACHE = {}


def _bench_data(model: SystemModel, N):
    key = (model.A.tobytes(), model.B.tobytes(), model.Q.tobytes(),
           model.R.tobytes(), N)
    if key not in _BENCH_CACHE:
        stack = build_stack(model, N)
        _BENCH_CACHE[key] = (stack, clairvoyant_gain(stack))
    return _BENCH_CACHE[key]


def clairvoyant_trajectory(model: SystemModel, x0, w):
    """Noncausal-optimal states, inputs and stage costs on realized w."""
    w = np.asarray(w, dtype=float)
    N = w.shape[0]
    stack, C = _bench_data(model, N)
    delta = np.concatenate([np.asarray(x0, dtype=float), w.ravel()])
    u = C.gain_noncausal @ delta
    x = stack.G @ delta + stack.F @ u
    xs = x.reshape(N + 1, model.n)
    us = u.reshape(N, model.m)
    stage = np.einsum("ti,ij,tj->t", xs[:N], model.Q, xs[:N]) \
        + np.einsum("ti,ij,tj->t", us, model.R, us)
    return xs, us, stage


def clairvoyant_benchmark_cost(model: SystemModel, x0, w):
    """delta' C_N delta for the realized (x0, w)."""
    w = np.asarray(w, dtype=float)
    _, C = _bench_data(model, w.shape[0])
    delta = np.concatenate([np.asarray(x0, dtype=float), w.ravel()])
    return float(delta @ C.C_T @ delta)


def fixed_gamma_level(engine, x0, gamma_f, tol=1e-3):
    """max(gamma*_T(x0), gamma_f) for the fixed-gamma replan schedule.

    One feasibility solve in the common case where the terminal level
    already dominates; otherwise bisect upward from gamma_f.
    """
    x0 = np.asarray(x0, dtype=float)
    if engine.feasible(x0, gamma_f):
        return gamma_f
    lo, hi = gamma_f, 2 * gamma_f
    while not engine.feasible(x0, hi):
        lo = hi
        hi *= 2.0
        if hi > GAMMA_BRACKET_CAP:
            raise InfeasibleError(
                "no feasible performance level from x0 below the bracket cap")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if engine.feasible(x0, mid):
            hi = mid
        else:
            lo = mid
    return hi


def gamma_schedule(engine, gamma_f, x, mode, gamma_bar=None, tol=1e-3):
    """Attenuation level for the replan at state x.

    fixed: reuse gamma_bar = max(gamma*_T(x0), gamma_f) computed at t=0;
    replanning feasibly at that level certifies the invariance bound.
    per_replan_bisection: re-bisect gamma*_T at the current state.
    """
    if mode == "fixed":
        if gamma_bar is None:
            raise ValueError("fixed mode needs gamma_bar from t=0")
        return gamma_bar
    if mode == "per_replan_bisection":
        return max(engine.min_gamma(x, tol=tol), gamma_f)
    raise ValueError("unknown gamma mode %r" % mode)


def regret_ledger(trace: SimulationTrace, model: SystemModel, tol=1e-4):
    """Audit the realized regret against the certified value bound.

    regret_sum = J_N - J_N^c - gamma_bar^2 |w|^2 must not exceed
    V*_T(x0, gamma_0) + tol, with gamma_bar the largest gamma any replan
    used and V* the value recorded at the t=0 replan.
    """
    J_c = clairvoyant_benchmark_cost(model, trace.x[0], trace.w)
    gbar = trace.gamma_bar
    lhs = trace.J_N - J_c - gbar ** 2 * trace.w_energy
    V0 = trace.replans[0].value
    return RegretLedger(J_N=trace.J_N, J_clairvoyant=J_c,
                        w_energy=trace.w_energy, gamma_bar=gbar,
                        regret_sum=lhs, V0=V0, bound=V0 + tol,
                        satisfied=bool(lhs <= V0 + tol))


def receding_horizon_run(preset, objective_kind, profile, s, *,
                         gamma_mode="fixed", gamma_bar=None, x0=None,
                         engine=None, ledger=True):
    """Run the closed loop: replan at t = 0, s, 2s, ...; apply s moves each.

    profile is a DisturbanceProfile or a prerealized (N, n) array.  The
    final partial window reuses the last plan for the remaining steps.
    Infeasibility or a solver breakdown at a replan marks the run failed
    with the offending state instead of raising.
    """
    model = preset.model
    n, m = model.n, model.m
    T, N = preset.T, preset.N
    if not 1 <= s <= T:
        raise ValueError("stride s must satisfy 1 <= s <= T")
    eng = preset.engine(objective_kind) if engine is None else engine
    x = np.array(preset.x0 if x0 is None else x0, dtype=float)
    if isinstance(profile, DisturbanceProfile):
        w = profile.realize(N)
    else:
        w = np.asarray(profile, dtype=float)
    if w.shape != (N, n):
        raise ValueError("disturbance realization must be (N, n)")

    t_start = time.perf_counter()
    needs_gamma = objective_kind == "regret_fixed_gamma"
    if needs_gamma and gamma_mode == "fixed" and gamma_bar is None:
        gamma_bar = fixed_gamma_level(eng, x, preset.terminal.gamma_f,
                                      tol=preset.gamma_tol)

    xs = np.zeros((N + 1, n))
    xs[0] = x
    us = np.zeros((N, m))
    stage = np.zeros(N)
    gam = np.full(N, np.nan)
    replans = []
    failed = False
    failure_state = None
    failure_reason = ""
    gamma0 = None

    for rt in range(0, N, s):
        steps = min(s, N - rt)
        g = None
        if needs_gamma:
            try:
                g = gamma_schedule(eng, preset.terminal.gamma_f, x,
                                   gamma_mode, gamma_bar=gamma_bar,
                                   tol=preset.gamma_tol)
            except (InfeasibleError, RuntimeError) as e:
                failed, failure_state = True, x.copy()
                failure_reason = "gamma schedule failed: %s" % e
                replans.append(ReplanRecord(t=rt, gamma=np.nan, value=np.nan,
                                            violation=np.nan, solve_time=0.0,
                                            iters=0, feasible=False))
                break
            if gamma0 is None:
                gamma0 = g
            elif g > max(gamma0, preset.terminal.gamma_f) \
                    + 2 * preset.gamma_tol:
                failed, failure_state = True, x.copy()
                failure_reason = ("invariance bound violated: gamma_t=%.6g "
                                  "above max(gamma_0, gamma_f)" % g)
                replans.append(ReplanRecord(t=rt, gamma=g, value=np.nan,
                                            violation=np.nan, solve_time=0.0,
                                            iters=0, feasible=False))
                break
        try:
            plan = eng.plan(x, g) if needs_gamma else eng.plan(x)
        except (InfeasibleError, SolverFailure) as e:
            failed, failure_state = True, x.copy()
            failure_reason = "%s at replan t=%d: %s" % (
                type(e).__name__, rt, e)
            replans.append(ReplanRecord(t=rt, gamma=np.nan if g is None
                                        else g, value=np.nan,
                                        violation=np.nan, solve_time=0.0,
                                        iters=0, feasible=False))
            break
        g_rec = plan.gamma if g is None else g
        replans.append(ReplanRecord(t=rt, gamma=g_rec, value=plan.value,
                                    violation=plan.violation,
                                    solve_time=plan.solve_time,
                                    iters=plan.iters, feasible=True,
                                    tightened=plan.tightened))
        for k in range(steps):
            t = rt + k
            u = plan.rollout_input(k, m, n, w[rt:t].ravel())
            us[t] = u
            stage[t] = float(x @ model.Q @ x + u @ model.R @ u)
            gam[t] = g_rec
            x = model.A @ x + model.B @ u + w[t]
            xs[t + 1] = x

    trace = SimulationTrace(objective_kind=objective_kind, s=s, x=xs, u=us,
                            w=w, stage_cost=stage, gamma_t=gam,
                            replans=replans, failed=failed,
                            failure_state=failure_state,
                            failure_reason=failure_reason)
    trace.runtime_s = time.perf_counter() - t_start
    if ledger and trace.success and needs_gamma:
        trace.ledger = regret_ledger(trace, model)
        if not trace.ledger.satisfied:
            warnings.warn("regret ledger bound violated by %.3e"
                          % (trace.ledger.regret_sum - trace.ledger.bound),
                          RuntimeWarning)
    return trace


@dataclass
class DecayFit:
    """Geometric envelope of ||x_t|| for an undisturbed run."""
    ratio: float      # exp(least-squares slope of log||x_t||) before floor
    floor: float      # numerical zero: solver noise re-injected per replan
    fit_steps: int    # length of the decaying stretch used for the fit
    tail_max: float   # max ||x_t|| over the second half of the run


def decay_envelope(trace: SimulationTrace, floor=None) -> DecayFit:
    """Fit a geometric decay envelope to an undisturbed closed-loop run.

    Replanning re-injects input noise at the solver tolerance, so the state
    cannot decay below a small floor; the fit covers the stretch above it
    and the tail is reported separately (it should sit at the floor).
    """
    norms = np.linalg.norm(trace.x, axis=1)
    N = trace.u.shape[0]
    if floor is None:
        floor = 1e-6 * max(1.0, float(norms[0]))
    below = norms <= floor
    t_end = int(np.argmax(below)) if below.any() else len(norms)
    tail_max = float(norms[N // 2:].max())
    if t_end < 3:
        return DecayFit(0.0, floor, t_end, tail_max)
    t = np.arange(t_end)
    slope = np.polyfit(t, np.log(norms[:t_end]), 1)[0]
    return DecayFit(float(np.exp(slope)), floor, t_end, tail_max)


def dissipation_residuals(engine, trace: SimulationTrace, gamma=None,
                          steps=None, tight=True):
    """Per-step [V*(x_{t+1}) - V*(x_t) + stage regret loss] along the run.

    Re-evaluates the fixed-gamma value function at consecutive states; the
    certified inequality says every entry is <= 0 up to solver accuracy.
    """
    model = engine.problem.stack.model
    g = trace.gamma_bar if gamma is None else gamma
    N = trace.u.shape[0]
    ts = range(N) if steps is None else list(steps)
    _, _, stage_c = clairvoyant_trajectory(model, trace.x[0], trace.w)
    wsq = np.sum(trace.w * trace.w, axis=1)
    ell_r = trace.stage_cost - g ** 2 * wsq - stage_c
    needed = sorted({t for t in ts} | {t + 1 for t in ts})
    V = {t: engine.value(trace.x[t], g, tight=tight) for t in needed}
    return np.array([V[t + 1] - V[t] + ell_r[t] for t in ts])
