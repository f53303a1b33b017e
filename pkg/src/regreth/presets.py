"""Built-in experiment presets.

The benchmark plant with its safe sets, terminal design, and compiled
replan engines, plus a scalar instance for smoke tests.  The terminal
attenuation level is chosen jointly: the Riccati recursion must admit a
solution and the resulting invariant set must be admissible inside the
safe set, which is not monotone in gamma, so the search grows the level
geometrically to the first admissible window and bisects into it.
"""

from dataclasses import dataclass, field

import numpy as np

from .lti import (SystemModel, Polytope, build_stack, box_polytope,
                  cross_polytope, stack_polytope)
from .clairvoyant import ClairvoyantData, clairvoyant_gain
from .terminal import (TerminalIngredients, bisect_gamma_f, solve_dare_h2,
                       solve_dare_hinf)
from .invariant import (AdmissibilityReport, RpiResult, check_admissible,
                        mrpi_approx)
from .synthesis import (H2Engine, HinfEngine, RegretEngine, SynthesisProblem,
                        lift_safe_rows)

PAPER_A = 0.7 * np.array([[0.7, 0.2, 0.0],
                          [0.3, 0.7, -0.1],
                          [0.0, -0.2, 0.8]])
PAPER_B = np.array([[1.0, 0.2],
                    [2.0, 0.3],
                    [1.5, 0.5]])
PAPER_X0 = np.array([-3.08, 1.22, -0.62])
PAPER_X_BOUND = 3.5
PAPER_U_BOUND = 2.0
PAPER_W_BOUND = 1.0


def paper_model() -> SystemModel:
    return SystemModel(A=PAPER_A, B=PAPER_B, Q=np.eye(3), R=np.eye(2))


def scalar_model() -> SystemModel:
    return SystemModel(A=[[0.0]], B=[[1.0]], Q=[[1.0]], R=[[1.0]])


def select_terminal(model, Z_stage, W_stage, epsilon=0.5, tol=1e-3,
                    growth=1.002, span=8.0):
    """Pick gamma_f so the Riccati solution exists and its set fits in Z.

    Returns (ingredients, rpi, admissibility report).  Admissibility is
    checked on the invariant set of A + B K_f with the input-map rows
    added as extra support directions, so the reported margins are exact.
    """
    n, m = model.n, model.m

    def attempt(gamma):
        sol = solve_dare_hinf(model, gamma)
        if not sol.feasible:
            return None
        Af = model.A + model.B @ sol.K_f
        extra = np.vstack([sol.K_f, -sol.K_f])
        try:
            rpi = mrpi_approx(Af, W_stage, epsilon, extra_directions=extra)
        except (RuntimeError, ValueError):
            return None
        rep = check_admissible(rpi.set, sol.K_f, Z_stage)
        if not rep.admissible:
            return None
        return sol, rpi, rep

    gamma_r, _ = bisect_gamma_f(model, tol)
    gamma = gamma_r
    hit = attempt(gamma)
    last_bad = None
    while hit is None:
        last_bad = gamma
        gamma *= growth
        if gamma > span * gamma_r:
            raise RuntimeError(
                "no admissible terminal level within %gx of the Riccati "
                "minimum" % span)
        hit = attempt(gamma)
    if last_bad is not None:
        lo = last_bad
        while gamma - lo > tol:
            mid = 0.5 * (lo + gamma)
            trial = attempt(mid)
            if trial is None:
                lo = mid
            else:
                gamma, hit = mid, trial
    sol, rpi, rep = hit
    P2, K2 = solve_dare_h2(model)
    ing = TerminalIngredients(P=sol.P, Pbar=sol.Pbar, K_f=sol.K_f,
                              gamma_f=gamma, P2=P2, K2=K2)
    return ing, rpi, rep


def h2_terminal_set(model, Z_stage, W_stage, K2, epsilon=0.5):
    """Admissible invariant set for the expected-cost scheme (law u = -K2 x).

    Tries successively tighter approximation accuracies if the first set
    pokes out of the safe set.
    """
    Af = model.A - model.B @ K2
    extra = np.vstack([-K2, K2])
    eps = epsilon
    for _ in range(6):
        rpi = mrpi_approx(Af, W_stage, eps, extra_directions=extra)
        rep = check_admissible(rpi.set, -K2, Z_stage)
        if rep.admissible:
            return rpi, rep
        eps *= 0.5
    raise RuntimeError("no admissible invariant set for the H2 terminal law")


@dataclass
class Preset:
    """Everything one experiment family needs, with engines built lazily."""
    name: str
    model: SystemModel
    T: int
    N: int
    x0: np.ndarray
    W_stage: Polytope
    Z_stage: Polytope
    terminal: TerminalIngredients
    Zf: Polytope
    Zf_h2: Polytope
    rpi: RpiResult
    admissibility: AdmissibilityReport
    sigma: float = 1.0
    gamma_tol: float = 1e-3
    engine_kwargs: dict = field(default_factory=dict)
    _stacks: dict = field(default_factory=dict, repr=False)
    _engines: dict = field(default_factory=dict, repr=False)
    _C: ClairvoyantData = field(default=None, repr=False)

    def stack(self, kind="regret_fixed_gamma"):
        key = "h2" if kind == "h2" else "hinf"
        if key not in self._stacks:
            P = self.terminal.P2 if key == "h2" else self.terminal.P
            self._stacks[key] = build_stack(self.model, self.T, P=P)
        return self._stacks[key]

    def clairvoyant(self):
        # C_T depends on Qblk only (no terminal weight), shared by all kinds
        if self._C is None:
            self._C = clairvoyant_gain(self.stack())
        return self._C

    def problem(self, kind, x0=None, gamma=None, sigma=None):
        st = self.stack(kind)
        n, m = self.model.n, self.model.m
        needs_c = kind in ("regret_fixed_gamma", "regret_energy")
        return SynthesisProblem(
            stack=st,
            x0=self.x0 if x0 is None else x0,
            W_stacked=stack_polytope(self.W_stage, self.T),
            Z_stacked=lift_safe_rows(self.Z_stage, self.T, n, m),
            Zf=self.Zf_h2 if kind == "h2" else self.Zf,
            objective_kind=kind,
            C_T=self.clairvoyant() if needs_c else None,
            gamma=(1.0 if gamma is None else gamma)
                  if kind == "regret_fixed_gamma" else None,
            sigma=self.sigma if sigma is None else sigma)

    def engine(self, kind="regret_fixed_gamma", **kwargs):
        kwargs = {**self.engine_kwargs, **kwargs}
        key = (kind, tuple(sorted(kwargs.items())))
        if key not in self._engines:
            cls = {"regret_fixed_gamma": RegretEngine,
                   "h2": H2Engine,
                   "hinf": HinfEngine}[kind]
            self._engines[key] = cls(self.problem(kind), **kwargs)
        return self._engines[key]

    def reset_engines(self):
        """Drop warm starts so a run's numbers do not depend on run order."""
        for eng in self._engines.values():
            eng.reset()


_CACHE = {}


def paper_preset(T=20, N=60, epsilon=0.5, gamma_tol=1e-3) -> Preset:
    """The benchmark plant with horizon T and simulation length N."""
    key = ("paper", T, N, epsilon, gamma_tol)
    if key in _CACHE:
        return _CACHE[key]
    model = paper_model()
    W_stage = box_polytope(PAPER_W_BOUND, model.n)
    Z_stage = cross_polytope(box_polytope(PAPER_X_BOUND, model.n),
                             box_polytope(PAPER_U_BOUND, model.m))
    ing, rpi, rep = select_terminal(model, Z_stage, W_stage, epsilon=epsilon,
                                    tol=gamma_tol)
    rpi2, _ = h2_terminal_set(model, Z_stage, W_stage, ing.K2,
                              epsilon=epsilon)
    preset = Preset(name="paper", model=model, T=T, N=N,
                    x0=PAPER_X0.copy(), W_stage=W_stage, Z_stage=Z_stage,
                    terminal=ing, Zf=rpi.set, Zf_h2=rpi2.set, rpi=rpi,
                    admissibility=rep, gamma_tol=gamma_tol)
    _CACHE[key] = preset
    return preset


def reduced_preset(**kwargs) -> Preset:
    """Smaller-horizon variant of the benchmark preset."""
    kwargs.setdefault("T", 10)
    kwargs.setdefault("N", 30)
    return paper_preset(**kwargs)


def scalar_preset(T=1, N=8, bound=100.0) -> Preset:
    """Memoryless scalar plant; everything about it is closed form."""
    key = ("scalar", T, N, bound)
    if key in _CACHE:
        return _CACHE[key]
    model = scalar_model()
    W_stage = box_polytope(1.0, 1)
    Z_stage = cross_polytope(box_polytope(bound, 1), box_polytope(bound, 1))
    ing, rpi, rep = select_terminal(model, Z_stage, W_stage, epsilon=0.5)
    rpi2, _ = h2_terminal_set(model, Z_stage, W_stage, ing.K2)
    # the disturbance fills this terminal set exactly, so the safety
    # margin used for conditioning elsewhere would empty it
    preset = Preset(name="scalar", model=model, T=T, N=N,
                    x0=np.array([0.5]), W_stage=W_stage, Z_stage=Z_stage,
                    terminal=ing, Zf=rpi.set, Zf_h2=rpi2.set, rpi=rpi,
                    admissibility=rep, engine_kwargs={"margin": 0.0})
    _CACHE[key] = preset
    return preset


def custom_preset(plant, T=20, N=60, epsilon=0.5, gamma_tol=1e-3) -> Preset:
    """Preset from a plant mapping.

    Required keys: A, B.  Optional: Q, R (identity), x0 (zero), and the
    scalar box half-widths x_bound, u_bound (10.0) and w_bound (1.0).
    """
    A = np.atleast_2d(np.asarray(plant["A"], dtype=float))
    B = np.asarray(plant["B"], dtype=float)
    if B.ndim == 1:
        B = B.reshape(-1, 1)
    n, m = A.shape[0], B.shape[1]
    Q = np.asarray(plant["Q"], dtype=float) if "Q" in plant else np.eye(n)
    R = np.asarray(plant["R"], dtype=float) if "R" in plant else np.eye(m)
    model = SystemModel(A=A, B=B, Q=Q, R=R)
    W_stage = box_polytope(float(plant.get("w_bound", 1.0)), n)
    Z_stage = cross_polytope(
        box_polytope(float(plant.get("x_bound", 10.0)), n),
        box_polytope(float(plant.get("u_bound", 10.0)), m))
    x0 = np.asarray(plant.get("x0", np.zeros(n)), dtype=float).ravel()
    if x0.shape != (n,):
        raise ValueError("x0 must have %d entries, got %d" % (n, x0.size))
    ing, rpi, rep = select_terminal(model, Z_stage, W_stage, epsilon=epsilon,
                                    tol=gamma_tol)
    rpi2, _ = h2_terminal_set(model, Z_stage, W_stage, ing.K2,
                              epsilon=epsilon)
    return Preset(name=str(plant.get("name", "custom")), model=model,
                  T=T, N=N, x0=x0, W_stage=W_stage, Z_stage=Z_stage,
                  terminal=ing, Zf=rpi.set, Zf_h2=rpi2.set, rpi=rpi,
                  admissibility=rep, gamma_tol=gamma_tol)


def get_preset(name, **kwargs) -> Preset:
    builders = {"paper": paper_preset, "reduced": reduced_preset,
                "scalar": scalar_preset}
    if name not in builders:
        raise KeyError("unknown preset %r (have: %s)"
                       % (name, ", ".join(sorted(builders))))
    return builders[name](**kwargs)
