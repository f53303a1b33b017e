"""Finite-horizon safe policy synthesis as small conic programs.

Builds the closed-loop response parametrization over the achievability
subspace, dualizes polytopic safety constraints, and assembles the
regret / H2 / Hinf objectives as SDPs.  One-shot solvers return full
responses with duals; a persistent engine recompiles nothing between
receding-horizon replans and only swaps the conic (b, c) data.
"""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import cvxpy as cp
import scs

from .lti import HorizonStack, Polytope, psd_sqrt
from .clairvoyant import ClairvoyantData

logger = logging.getLogger("regreth.synthesis")

OBJECTIVE_KINDS = ("regret_fixed_gamma", "regret_energy", "h2", "hinf")

__all__ = [
    "OBJECTIVE_KINDS",
    "SynthesisError",
    "InfeasibleError",
    "SolverFailure",
    "ClosedLoopResponse",
    "SynthesisProblem",
    "SolveInfo",
    "SynthesisResult",
    "solve_conic",
    "build_achievability",
    "build_safety_dual",
    "build_theta_lmi",
    "solve_regret_fixed_gamma",
    "solve_regret_energy",
    "solve_h2",
    "solve_hinf",
    "regret_upper_bound",
    "min_gain",
    "box_bounds",
    "Plan",
    "RegretEngine",
    "H2Engine",
    "HinfEngine",
]


class SynthesisError(RuntimeError):
    """Base class for synthesis-level failures."""


class InfeasibleError(SynthesisError):
    """The requested program admits no safe causal policy."""


class SolverFailure(SynthesisError):
    """The conic solver returned neither a solution nor a certificate."""


# ---------------------------------------------------------------------------
# causal sparsity masks
# ---------------------------------------------------------------------------

def causal_mask_x(T, n):
    """Boolean mask of allowed entries of Phi_x (block lower triangular)."""
    nx = (T + 1) * n
    mask = np.zeros((nx, nx), dtype=bool)
    for i in range(T + 1):
        mask[i * n:(i + 1) * n, :(i + 1) * n] = True
    return mask


def causal_mask_u(T, m, n):
    """Boolean mask of allowed entries of Phi_u.

    u_t may depend on x0 and on the disturbances w_0..w_{t-1}, i.e. on the
    first t+1 blocks of the stacked signal delta.
    """
    mask = np.zeros((T * m, (T + 1) * n), dtype=bool)
    for t in range(T):
        mask[t * m:(t + 1) * m, :(t + 1) * n] = True
    return mask


def w_mask_x(T, n):
    """Mask of the disturbance columns of Phi_x (w_j hits x_{j+1})."""
    mask = np.zeros(((T + 1) * n, T * n), dtype=bool)
    for i in range(1, T + 1):
        mask[i * n:(i + 1) * n, :i * n] = True
    return mask


def w_mask_u(T, m, n):
    mask = np.zeros((T * m, T * n), dtype=bool)
    for t in range(T):
        mask[t * m:(t + 1) * m, :t * n] = True
    return mask


# ---------------------------------------------------------------------------
# closed-loop responses
# ---------------------------------------------------------------------------

class ClosedLoopResponse:
    """The pair of maps (Phi_x, Phi_u) from stacked (x0, w) to (x, u).

    Phi_x is ((T+1)n)x((T+1)n) block lower triangular with identity
    diagonal blocks; Phi_u is (Tm)x((T+1)n) with matching causal
    sparsity.  The feedback gain K = Phi_u Phi_x^{-1} is recovered
    lazily on first access.
    """

    def __init__(self, stack, Phi_x, Phi_u, clean=True):
        n, m, T = stack.model.n, stack.model.m, stack.T
        Phi_x = np.array(Phi_x, dtype=float)
        Phi_u = np.array(Phi_u, dtype=float)
        if Phi_x.shape != ((T + 1) * n, (T + 1) * n):
            raise ValueError("Phi_x shape mismatch")
        if Phi_u.shape != (T * m, (T + 1) * n):
            raise ValueError("Phi_u shape mismatch")
        if clean:
            Phi_x[~causal_mask_x(T, n)] = 0.0
            Phi_u[~causal_mask_u(T, m, n)] = 0.0
            for i in range(T + 1):
                Phi_x[i * n:(i + 1) * n, i * n:(i + 1) * n] = np.eye(n)
        self.stack = stack
        self.Phi_x = Phi_x
        self.Phi_u = Phi_u
        self.T, self.n, self.m = T, n, m
        self._K = None

    @property
    def Phi_0(self):
        """First block column, stacked as col(Phi_x^0, Phi_u^0)."""
        n = self.n
        return np.vstack([self.Phi_x[:, :n], self.Phi_u[:, :n]])

    @property
    def Phi_w(self):
        """Remaining block columns, stacked as col(Phi_x^w, Phi_u^w)."""
        n = self.n
        return np.vstack([self.Phi_x[:, n:], self.Phi_u[:, n:]])

    @property
    def K(self):
        if self._K is None:
            # Phi_x is lower triangular with unit diagonal by construction
            self._K = scipy.linalg.solve_triangular(
                self.Phi_x.T, self.Phi_u.T, lower=False, unit_diagonal=True).T
        return self._K

    def achievability_residual(self, stack=None):
        stack = stack or self.stack
        ZA = stack.Zshift @ stack.Ablk
        ZB = stack.Zshift @ stack.Bblk
        res = (np.eye(stack.nx) - ZA) @ self.Phi_x - ZB @ self.Phi_u
        return float(np.max(np.abs(res - np.eye(stack.nx))))

    @classmethod
    def from_gain(cls, stack, K):
        """Rebuild the responses realized by the causal gain K."""
        K = np.asarray(K, dtype=float)
        ZA = stack.Zshift @ stack.Ablk
        ZB = stack.Zshift @ stack.Bblk
        M = np.eye(stack.nx) - ZA - ZB @ K
        Phi_x = scipy.linalg.solve_triangular(
            M, np.eye(stack.nx), lower=True, unit_diagonal=True)
        return cls(stack, Phi_x, K @ Phi_x, clean=False)


# ---------------------------------------------------------------------------
# problem container
# ---------------------------------------------------------------------------

@dataclass
class SynthesisProblem:
    """One finite-horizon synthesis instance.

    Z_stacked constrains the stacked trajectory col(x_0..x_T, u_0..u_{T-1});
    Zf acts on x_T and is folded into the same row system when the safety
    constraints are assembled.
    """
    stack: HorizonStack
    x0: np.ndarray
    W_stacked: Polytope
    Z_stacked: Polytope
    Zf: Polytope = None
    objective_kind: str = "regret_fixed_gamma"
    C_T: ClairvoyantData = None
    gamma: float = None
    sigma: float = None

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        st = self.stack
        if self.x0.size != st.model.n:
            raise ValueError("x0 dimension mismatch")
        if self.objective_kind not in OBJECTIVE_KINDS:
            raise ValueError("unknown objective_kind %r" % self.objective_kind)
        if self.W_stacked.d != st.nw:
            raise ValueError("W_stacked must live in R^(Tn)")
        if self.Z_stacked.d != st.nx + st.nu:
            raise ValueError("Z_stacked must live in R^((T+1)n + Tm)")
        if self.Zf is not None and self.Zf.d != st.model.n:
            raise ValueError("Zf must live in R^n")
        if self.objective_kind in ("regret_fixed_gamma", "regret_energy"):
            if self.C_T is None:
                raise ValueError("regret objectives need the clairvoyant data")
            if self.C_T.T != st.T or self.C_T.n != st.model.n:
                raise ValueError("C_T built for a different (model, T)")
        if self.objective_kind == "regret_fixed_gamma" and self.gamma is None:
            raise ValueError("fixed-gamma variant needs gamma")
        if self.objective_kind == "regret_energy" and (
                self.sigma is None or self.sigma <= 0):
            raise ValueError("energy variant needs sigma > 0")

    def safety_rows(self):
        """Combined (H, h) over col(x, u) with terminal rows folded in."""
        H, h = self.Z_stacked.H, self.Z_stacked.h
        if self.Zf is not None and self.Zf.nrows:
            st = self.stack
            n = st.model.n
            Hf = np.zeros((self.Zf.nrows, st.nx + st.nu))
            Hf[:, st.nx - n:st.nx] = self.Zf.H
            H = np.vstack([H, Hf])
            h = np.concatenate([h, self.Zf.h])
        return H, h

    def clairvoyant_blocks(self):
        n, nw = self.stack.model.n, self.stack.nw
        C = self.C_T.C_T
        return C[:n, :n], C[:n, n:], C[n:, n:]


def lift_safe_rows(Z_stage, T, n, m):
    """Stack a per-stage safe set over the horizon.

    Z_stage constrains (x_t, u_t) jointly for t < T; at t = T only the
    rows with zero input coefficients apply (there is no u_T).
    """
    Hx = Z_stage.H[:, :n]
    Hu = Z_stage.H[:, n:]
    nx, nu = (T + 1) * n, T * m
    rows, rhs = [], []
    for t in range(T):
        R = np.zeros((Z_stage.nrows, nx + nu))
        R[:, t * n:(t + 1) * n] = Hx
        R[:, nx + t * m:nx + (t + 1) * m] = Hu
        rows.append(R)
        rhs.append(Z_stage.h)
    pure_x = np.all(Hu == 0, axis=1)
    if np.any(pure_x):
        R = np.zeros((int(pure_x.sum()), nx + nu))
        R[:, T * n:(T + 1) * n] = Hx[pure_x]
        rows.append(R)
        rhs.append(Z_stage.h[pure_x])
    return Polytope(np.vstack(rows), np.concatenate(rhs))


def box_bounds(P):
    """Per-coordinate bound b if P is a symmetric axis-aligned box, else None."""
    H, h = P.H, P.h
    up = np.full(P.d, np.inf)
    lo = np.full(P.d, np.inf)
    for i in range(P.nrows):
        row = H[i]
        nz = np.nonzero(row)[0]
        if nz.size != 1:
            return None
        j = nz[0]
        bound = h[i] / abs(row[j])
        if row[j] > 0:
            up[j] = min(up[j], bound)
        else:
            lo[j] = min(lo[j], bound)
    if not (np.all(np.isfinite(up)) and np.all(np.isfinite(lo))):
        return None
    if np.max(np.abs(up - lo)) > 1e-10 * max(1.0, np.max(np.abs(up))):
        return None
    return 0.5 * (up + lo)


# ---------------------------------------------------------------------------
# conic solve wrapper
# ---------------------------------------------------------------------------

@dataclass
class SolveInfo:
    status: str
    value: float
    res_pri: float = np.nan
    res_dual: float = np.nan
    gap: float = np.nan
    iters: int = 0
    solve_time: float = 0.0
    accurate: bool = True


def solve_conic(prob, eps=1e-8, max_iters=200_000, verbose=False):
    """Solve a cvxpy cone program, never hiding reduced accuracy.

    Returns a SolveInfo whose status is one of optimal / infeasible /
    unbounded / numerical_failure; the accurate flag is dropped (and a
    warning emitted) whenever the solver stopped short of the requested
    tolerance.
    """
    try:
        prob.solve(solver=cp.SCS, eps_abs=eps, eps_rel=eps,
                   max_iters=max_iters, verbose=verbose)
    except cp.error.SolverError as exc:
        logger.warning("conic solve failed: %s", exc)
        return SolveInfo(status="numerical_failure", value=np.nan,
                         accurate=False)
    status = prob.status
    stats = prob.solver_stats
    info = {}
    if stats is not None and stats.extra_stats:
        info = stats.extra_stats.get("info", {})
    out = SolveInfo(
        status="numerical_failure",
        value=prob.value if prob.value is not None else np.nan,
        res_pri=float(info.get("res_pri", np.nan)),
        res_dual=float(info.get("res_dual", np.nan)),
        gap=float(info.get("gap", np.nan)),
        iters=int(stats.num_iters or 0) if stats is not None else 0,
        solve_time=float(stats.solve_time or 0.0) if stats is not None else 0.0,
    )
    if status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        out.status = "optimal"
    elif status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        out.status = "infeasible"
    elif status in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
        out.status = "unbounded"
    if status.endswith("inaccurate"):
        out.accurate = False
        warnings.warn("solver stopped with reduced accuracy (%s)" % status,
                      RuntimeWarning, stacklevel=2)
    return out


@dataclass
class SynthesisResult:
    response: ClosedLoopResponse
    value: float
    duals: dict
    status: SolveInfo


# ---------------------------------------------------------------------------
# constraint builders (full-matrix form)
# ---------------------------------------------------------------------------

def build_achievability(stack, Phi_x, Phi_u):
    """Subspace equalities plus zero pins on every acausal block."""
    n, m, T = stack.model.n, stack.model.m, stack.T
    ZA = stack.Zshift @ stack.Ablk
    ZB = stack.Zshift @ stack.Bblk
    cons = [(np.eye(stack.nx) - ZA) @ Phi_x - ZB @ Phi_u == np.eye(stack.nx)]
    off_x = ~causal_mask_x(T, n)
    off_u = ~causal_mask_u(T, m, n)
    if off_x.any():
        cons.append(Phi_x[off_x] == 0)
    if off_u.any():
        cons.append(Phi_u[off_u] == 0)
    return cons


def _split_columns(stack, Phi_x, Phi_u, x0):
    n = stack.model.n
    v0 = cp.hstack([Phi_x[:, :n] @ x0, Phi_u[:, :n] @ x0])
    Phi_w = cp.vstack([Phi_x[:, n:], Phi_u[:, n:]])
    return v0, Phi_w


def build_safety_dual(problem, Phi_x, Phi_u, margin=0.0):
    """Dualized robust safety: Y^T h_w <= h_z - H_z Phi_0 x0, H_z Phi_w = Y^T H_w."""
    Hz, hz = problem.safety_rows()
    Hw, hw = problem.W_stacked.H, problem.W_stacked.h
    v0, Phi_w = _split_columns(problem.stack, Phi_x, Phi_u, problem.x0)
    Y = cp.Variable((Hw.shape[0], Hz.shape[0]), nonneg=True)
    cons = [
        Hz @ Phi_w == Y.T @ Hw,
        Y.T @ hw + Hz @ v0 <= hz - margin,
    ]
    return cons, Y


def _theta_matrix(tau_plus_c00, row_w, block_ww, SHv0, SHPw, nw, nxu):
    """Assemble the 3x3-block Schur certificate shared by all objectives."""
    return cp.bmat([
        [cp.reshape(tau_plus_c00, (1, 1), order="C"),
         cp.reshape(row_w, (1, nw), order="C"),
         cp.reshape(SHv0, (1, nxu), order="C")],
        [cp.reshape(row_w, (nw, 1), order="C"),
         block_ww,
         SHPw.T],
        [cp.reshape(SHv0, (nxu, 1), order="C"),
         SHPw,
         np.eye(nxu)],
    ])


def build_theta_lmi(problem, Phi_x, Phi_u, tau, eta, gamma=None):
    """PSD certificate of the fixed-gamma regret bound (Schur-lifted QMI)."""
    st = problem.stack
    gamma = problem.gamma if gamma is None else gamma
    C00, C0w, Cww = problem.clairvoyant_blocks()
    x0 = problem.x0
    SH = psd_sqrt(st.Sbar)
    Hw = problem.W_stacked.H
    v0, Phi_w = _split_columns(st, Phi_x, Phi_u, x0)
    theta = _theta_matrix(
        tau + float(x0 @ C00 @ x0),
        eta @ Hw + x0 @ C0w,
        gamma ** 2 * np.eye(st.nw) + Cww,
        SH @ v0, SH @ Phi_w, st.nw, st.nx + st.nu)
    return theta >> 0


def _clean_result(problem, Phi_x, Phi_u, value, duals, info):
    resp = ClosedLoopResponse(problem.stack, Phi_x.value, Phi_u.value)
    return SynthesisResult(response=resp, value=float(value), duals=duals,
                           status=info)


def _raise_on_bad_status(info, context):
    if info.status == "infeasible":
        raise InfeasibleError("%s: no safe policy at the requested level"
                              % context)
    if info.status in ("unbounded", "numerical_failure"):
        raise SolverFailure("%s: solver status %s" % (context, info.status))


def solve_regret_fixed_gamma(problem, eps=1e-8, margin=0.0):
    """Minimize the worst-case regret bound 2 h_w' eta + tau at fixed gamma."""
    assert problem.objective_kind == "regret_fixed_gamma"
    st = problem.stack
    Phi_x = cp.Variable((st.nx, st.nx))
    Phi_u = cp.Variable((st.nu, st.nx))
    eta = cp.Variable(problem.W_stacked.nrows, nonneg=True)
    tau = cp.Variable()
    cons = build_achievability(st, Phi_x, Phi_u)
    safety, Y = build_safety_dual(problem, Phi_x, Phi_u, margin=margin)
    cons += safety
    cons.append(build_theta_lmi(problem, Phi_x, Phi_u, tau, eta))
    hw = problem.W_stacked.h
    prob = cp.Problem(cp.Minimize(2 * hw @ eta + tau), cons)
    info = solve_conic(prob, eps=eps)
    _raise_on_bad_status(info, "regret_fixed_gamma")
    duals = {"Y": Y.value, "eta": eta.value, "tau": float(tau.value)}
    return _clean_result(problem, Phi_x, Phi_u, prob.value, duals, info)


def solve_regret_energy(problem, eps=1e-8, margin=0.0):
    """Jointly minimize the performance level over the energy ball."""
    assert problem.objective_kind == "regret_energy"
    st = problem.stack
    x0, sigma = problem.x0, problem.sigma
    C00, C0w, Cww = problem.clairvoyant_blocks()
    SH = psd_sqrt(st.Sbar)
    Phi_x = cp.Variable((st.nx, st.nx))
    Phi_u = cp.Variable((st.nu, st.nx))
    gamma = cp.Variable(nonneg=True)
    lam = cp.Variable(nonneg=True)
    cons = build_achievability(st, Phi_x, Phi_u)
    safety, Y = build_safety_dual(problem, Phi_x, Phi_u, margin=margin)
    cons += safety
    v0, Phi_w = _split_columns(st, Phi_x, Phi_u, x0)
    xi = _theta_matrix(
        gamma + float(x0 @ C00 @ x0) - sigma ** 2 * lam,
        np.atleast_1d(x0 @ C0w),
        lam * np.eye(st.nw) + Cww,
        SH @ v0, SH @ Phi_w, st.nw, st.nx + st.nu)
    cons.append(xi >> 0)
    prob = cp.Problem(cp.Minimize(gamma), cons)
    info = solve_conic(prob, eps=eps)
    _raise_on_bad_status(info, "regret_energy")
    duals = {"Y": Y.value, "lam": float(lam.value)}
    return _clean_result(problem, Phi_x, Phi_u, gamma.value, duals, info)


def solve_h2(problem, eps=1e-8, margin=0.0):
    """Minimize the unit-covariance expected cost plus the x0 column."""
    assert problem.objective_kind == "h2"
    st = problem.stack
    SH = psd_sqrt(st.Sbar)
    Phi_x = cp.Variable((st.nx, st.nx))
    Phi_u = cp.Variable((st.nu, st.nx))
    cons = build_achievability(st, Phi_x, Phi_u)
    safety, Y = build_safety_dual(problem, Phi_x, Phi_u, margin=margin)
    cons += safety
    v0, Phi_w = _split_columns(st, Phi_x, Phi_u, problem.x0)
    cost = cp.sum_squares(SH @ cp.hstack(
        [cp.reshape(v0, (st.nx + st.nu, 1), order="C"), Phi_w]))
    prob = cp.Problem(cp.Minimize(cost), cons)
    info = solve_conic(prob, eps=eps)
    _raise_on_bad_status(info, "h2")
    return _clean_result(problem, Phi_x, Phi_u, prob.value, {"Y": Y.value},
                         info)


def solve_hinf(problem, eps=1e-8, margin=0.0):
    """Minimize the induced gain, then pin the policy at that level.

    The gain minimization alone leaves the x0 response undetermined, so a
    second pass fixes gamma and minimizes the transient bound 2h_w'eta + tau
    of the same certificate with the clairvoyant blocks removed.
    """
    assert problem.objective_kind == "hinf"
    st = problem.stack
    SH = psd_sqrt(st.Sbar)
    Hw, hw = problem.W_stacked.H, problem.W_stacked.h

    def _common():
        Phi_x = cp.Variable((st.nx, st.nx))
        Phi_u = cp.Variable((st.nu, st.nx))
        cons = build_achievability(st, Phi_x, Phi_u)
        safety, Y = build_safety_dual(problem, Phi_x, Phi_u, margin=margin)
        cons += safety
        return Phi_x, Phi_u, Y, cons

    Phi_x, Phi_u, Y, cons = _common()
    _, Phi_w = _split_columns(st, Phi_x, Phi_u, problem.x0)
    gsq = cp.Variable(nonneg=True)
    gain_lmi = cp.bmat([[gsq * np.eye(st.nw), (SH @ Phi_w).T],
                        [SH @ Phi_w, np.eye(st.nx + st.nu)]])
    prob1 = cp.Problem(cp.Minimize(gsq), cons + [gain_lmi >> 0])
    info1 = solve_conic(prob1, eps=eps)
    _raise_on_bad_status(info1, "hinf gain stage")
    gsq_star = max(float(gsq.value), 0.0)

    Phi_x, Phi_u, Y, cons = _common()
    v0, Phi_w = _split_columns(st, Phi_x, Phi_u, problem.x0)
    eta = cp.Variable(problem.W_stacked.nrows, nonneg=True)
    tau = cp.Variable()
    theta = _theta_matrix(
        tau, eta @ Hw, gsq_star * (1 + 1e-9) * np.eye(st.nw) + 1e-12 * np.eye(st.nw),
        SH @ v0, SH @ Phi_w, st.nw, st.nx + st.nu)
    prob2 = cp.Problem(cp.Minimize(2 * hw @ eta + tau), cons + [theta >> 0])
    info2 = solve_conic(prob2, eps=eps)
    _raise_on_bad_status(info2, "hinf policy stage")
    duals = {"Y": Y.value, "eta": eta.value, "tau": float(tau.value)}
    res = _clean_result(problem, Phi_x, Phi_u, np.sqrt(gsq_star), duals, info2)
    return res


def regret_upper_bound(problem, response, gamma=None):
    """Tightest certified regret bound 2h_w'eta + tau for a fixed response."""
    st = problem.stack
    gamma = problem.gamma if gamma is None else gamma
    Hw, hw = problem.W_stacked.H, problem.W_stacked.h
    C00, C0w, Cww = problem.clairvoyant_blocks()
    SH = psd_sqrt(st.Sbar)
    x0 = problem.x0
    v0 = response.Phi_0 @ x0
    Pw = SH @ response.Phi_w
    eta = cp.Variable(Hw.shape[0], nonneg=True)
    tau = cp.Variable()
    theta = _theta_matrix(
        tau + float(x0 @ C00 @ x0),
        eta @ Hw + x0 @ C0w,
        gamma ** 2 * np.eye(st.nw) + Cww,
        SH @ v0, Pw, st.nw, st.nx + st.nu)
    prob = cp.Problem(cp.Minimize(2 * hw @ eta + tau), [theta >> 0])
    info = solve_conic(prob, eps=1e-9)
    _raise_on_bad_status(info, "regret_upper_bound")
    return float(prob.value)


# ---------------------------------------------------------------------------
# minimum feasible performance level
# ---------------------------------------------------------------------------

GAMMA_BRACKET_CAP = 2.0 ** 16


def _bisect_feasibility(feasible, tol, hi0=1.0):
    lo, hi = 0.0, hi0
    while not feasible(hi):
        lo = hi
        hi *= 2.0
        if hi > GAMMA_BRACKET_CAP:
            raise InfeasibleError(
                "no feasible performance level below the 2^16 bracket")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


def min_gain(problem, x=None, tol=1e-3, eps=1e-7):
    """Bisect the minimum gamma at which a safe policy exists from x.

    A numerical failure at a candidate level is retried once at a relaxed
    tolerance and then treated as infeasible (with a warning) so the
    bisection always terminates with a feasible upper end.
    """
    base = problem
    x = base.x0 if x is None else np.asarray(x, dtype=float)

    def feasible(g):
        trial = SynthesisProblem(
            stack=base.stack, x0=x, W_stacked=base.W_stacked,
            Z_stacked=base.Z_stacked, Zf=base.Zf,
            objective_kind="regret_fixed_gamma", C_T=base.C_T, gamma=g)
        for attempt, e in enumerate((eps, 100 * eps)):
            try:
                res = solve_regret_fixed_gamma(trial, eps=e)
            except InfeasibleError:
                return False
            except SolverFailure:
                if attempt:
                    warnings.warn(
                        "treating numerical failure at gamma=%.6g as "
                        "infeasible" % g, RuntimeWarning)
                    return False
                continue
            # marginally infeasible levels stall the solver into an
            # inaccurate "optimal"; only an accurate one certifies the level
            if res.status.accurate:
                return True
        warnings.warn("treating inaccurate solve at gamma=%.6g as "
                      "infeasible" % g, RuntimeWarning)
        return False

    return _bisect_feasibility(feasible, tol)


# ---------------------------------------------------------------------------
# structured safety lift shared by the persistent engines
# ---------------------------------------------------------------------------

class _SafetyLift:
    """L1 reformulation of the dual safety block for box disturbance sets.

    Coordinate rows of the safe set share one absolute-value lift per
    state/input entry; remaining rows (e.g. the terminal set) get a
    per-row lift.  Equivalent to the Y-form by LP duality on a box.
    """

    def __init__(self, problem):
        st = problem.stack
        n, m, T = st.model.n, st.model.m, st.T
        self.nx, self.nu, self.nw = st.nx, st.nu, st.nw
        b = box_bounds(problem.W_stacked)
        if b is None:
            raise ValueError("structured engine needs a box disturbance set")
        self.bvec = b
        H, h = problem.safety_rows()
        nx, nu = self.nx, self.nu
        xub = np.full(nx, np.inf)
        xlb = np.full(nx, np.inf)
        uub = np.full(nu, np.inf)
        ulb = np.full(nu, np.inf)
        gen_rows = []
        for i in range(H.shape[0]):
            row = H[i]
            nz = np.nonzero(row)[0]
            if nz.size == 1:
                j = nz[0]
                bound = h[i] / abs(row[j])
                pos = row[j] > 0
                if j < nx:
                    tgt = xub if pos else xlb
                    tgt[j] = min(tgt[j], bound)
                else:
                    tgt = uub if pos else ulb
                    tgt[j - nx] = min(tgt[j - nx], bound)
            else:
                gen_rows.append(i)
        self.xub, self.xlb, self.uub, self.ulb = xub, xlb, uub, ulb
        self.Ag = H[gen_rows, :nx] if gen_rows else np.zeros((0, nx))
        self.Bg = H[gen_rows, nx:] if gen_rows else np.zeros((0, nu))
        self.hg = h[gen_rows] if gen_rows else np.zeros(0)
        self.mask_xw = w_mask_x(T, n)
        self.mask_uw = w_mask_u(T, m, n)

    def constraints(self, v0x, v0u, Phixw, Phiuw, margin):
        cons = []
        b = self.bvec
        Xab = cp.Variable((self.nx, self.nw), nonneg=True)
        cons += [Xab[self.mask_xw] >= Phixw[self.mask_xw],
                 Xab[self.mask_xw] >= -Phixw[self.mask_xw],
                 Xab[~self.mask_xw] == 0]
        xsum = Xab @ b
        if self.mask_uw.any():
            # at T = 1 the input never sees a disturbance; skip the lift
            Uab = cp.Variable((self.nu, self.nw), nonneg=True)
            cons += [Uab[self.mask_uw] >= Phiuw[self.mask_uw],
                     Uab[self.mask_uw] >= -Phiuw[self.mask_uw],
                     Uab[~self.mask_uw] == 0]
            usum = Uab @ b
        else:
            usum = np.zeros(self.nu)
        iu = np.where(np.isfinite(self.xub))[0]
        il = np.where(np.isfinite(self.xlb))[0]
        if iu.size:
            cons.append(xsum[iu] + v0x[iu] <= self.xub[iu] - margin)
        if il.size:
            cons.append(xsum[il] - v0x[il] <= self.xlb[il] - margin)
        iu = np.where(np.isfinite(self.uub))[0]
        il = np.where(np.isfinite(self.ulb))[0]
        if iu.size:
            cons.append(usum[iu] + v0u[iu] <= self.uub[iu] - margin)
        if il.size:
            cons.append(usum[il] - v0u[il] <= self.ulb[il] - margin)
        if self.hg.size:
            Mg = self.Ag @ Phixw + self.Bg @ Phiuw
            Gab = cp.Variable(Mg.shape, nonneg=True)
            cons += [Gab >= Mg, Gab >= -Mg]
            cons.append(self.Ag @ v0x + self.Bg @ v0u + Gab @ b
                        <= self.hg - margin)
        return cons

    def violation(self, v0x, v0u, Phixw, Phiuw):
        """Worst true safety violation of a plan against the raw bounds."""
        b = self.bvec
        xsum = np.abs(Phixw) @ b
        usum = np.abs(Phiuw) @ b
        worst = -np.inf
        for bound, signed in ((self.xub, xsum + v0x), (self.xlb, xsum - v0x),
                              (self.uub, usum + v0u), (self.ulb, usum - v0u)):
            idx = np.isfinite(bound)
            if idx.any():
                worst = max(worst, float(np.max(signed[idx] - bound[idx])))
        if self.hg.size:
            Mg = self.Ag @ Phixw + self.Bg @ Phiuw
            gv = self.Ag @ v0x + self.Bg @ v0u + np.abs(Mg) @ b - self.hg
            worst = max(worst, float(np.max(gv)))
        return worst


def propagate_plan(model, T, x, v0u, Phiuw):
    """Exact forward propagation of a plan's state response.

    Recomputes the x0-column response and the disturbance response of the
    state from the input responses alone, so the returned maps satisfy the
    dynamics exactly (the solver's equality residuals are discarded).
    """
    A, B = model.A, model.B
    n, m = model.n, model.m
    nx, nw = (T + 1) * n, T * n
    v0x = np.zeros(nx)
    v0x[:n] = x
    for t in range(T):
        v0x[(t + 1) * n:(t + 2) * n] = (A @ v0x[t * n:(t + 1) * n]
                                        + B @ v0u[t * m:(t + 1) * m])
    Phixw = np.zeros((nx, nw))
    row = np.zeros((n, nw))
    for i in range(T):
        nxt = A @ row + B @ Phiuw[i * m:(i + 1) * m, :]
        nxt[:, i * n:(i + 1) * n] += np.eye(n)
        Phixw[(i + 1) * n:(i + 2) * n, :] = nxt
        row = nxt
    return v0x, Phixw


# ---------------------------------------------------------------------------
# persistent conic engine
# ---------------------------------------------------------------------------

class _ConeEngine:
    """Compile a parametric cone program once; per solve, only (b, c) move.

    A persistent SCS handle keeps its factorization across solves and is
    warm-started from the last solved point.  A second, tighter handle is
    created lazily for fallback re-solves.
    """

    def __init__(self, prob, params, eps=1e-4, tight_eps=1e-7,
                 max_iters=100_000):
        self.prob = prob
        self.params = params
        self.eps = eps
        self.tight_eps = tight_eps
        self.max_iters = max_iters
        data, _, _ = prob.get_problem_data(cp.SCS)
        self._pp = data["param_prob"]
        dims = data["dims"]
        self.cone = {"z": dims.zero, "l": dims.nonneg, "s": list(dims.psd)}
        if getattr(dims, "soc", None):
            self.cone["q"] = list(dims.soc)
        self._col = {v.id: self._pp.var_id_to_col[v.id]
                     for v in prob.variables()}
        # quadratic objective block (e.g. the expected-cost engine); SCS
        # factorizes it once, so it must not move between solves
        self._quad = self._pp.P is not None
        self._P = None
        self._solver = None
        self._tight = None
        self._warm = None

    def _apply(self, values):
        pv = {self.params[k].id: np.asarray(v) for k, v in values.items()}
        if self._quad:
            P, c, d0, neg_A, b = self._pp.apply_parameters(pv, quad_obj=True)
            P = sp.csc_matrix(P)
            if self._P is None:
                self._P = P
            elif (P != self._P).nnz:
                raise SolverFailure(
                    "quadratic objective changed across solves")
        else:
            c, d0, neg_A, b = self._pp.apply_parameters(pv)
        return np.asarray(c), float(d0), sp.csc_matrix(-neg_A), np.asarray(b)

    def _get_solver(self, A, b, c, tight):
        data = dict(A=A, b=b, c=c)
        if self._P is not None:
            data["P"] = self._P
        if tight:
            if self._tight is None:
                self._tight = scs.SCS(
                    data, self.cone, eps_abs=self.tight_eps,
                    eps_rel=self.tight_eps, max_iters=self.max_iters,
                    verbose=False)
            else:
                self._tight.update(b=b, c=c)
            return self._tight
        if self._solver is None:
            self._solver = scs.SCS(
                data, self.cone, eps_abs=self.eps,
                eps_rel=self.eps, max_iters=self.max_iters, verbose=False)
        else:
            self._solver.update(b=b, c=c)
        return self._solver

    def solve(self, values, tight=False):
        c, d0, A, b = self._apply(values)
        solver = self._get_solver(A, b, c, tight)
        if self._warm is not None:
            sol = solver.solve(warm_start=True, x=self._warm["x"],
                               y=self._warm["y"], s=self._warm["s"])
        else:
            # a reused handle would otherwise warm-start from its internal
            # previous solution; force the zero start so a reset engine
            # solves identically no matter what ran before it
            sol = solver.solve(warm_start=False)
        info = sol["info"]
        status = info["status"].lower()
        if status.startswith("solved"):
            self._warm = sol
            kind = "optimal"
        elif "infeasible" in status:
            kind = "infeasible"
        elif "unbounded" in status:
            kind = "unbounded"
        else:
            kind = "numerical_failure"
        return {
            "kind": kind,
            "accurate": "inaccurate" not in status,
            "x": sol["x"],
            "pobj": float(info["pobj"]) + d0,
            "iters": int(info["iter"]),
            "time": float(info["solve_time"]) / 1e3,
        }

    def reset(self):
        """Make the next solve behave as if this were a fresh process.

        Dropping the handles matters as much as dropping the warm start:
        SCS keeps adaptive scaling state inside its workspace that update()
        does not clear, so a reused handle converges along a different path
        than a newly built one.  Setup cost is paid once per reset; the
        compiled problem is untouched.
        """
        self._warm = None
        self._solver = None
        self._tight = None

    def extract(self, var, x):
        st = self._col[var.id]
        size = int(np.prod(var.shape))
        val = np.asarray(x[st:st + size])
        if len(var.shape) == 2:
            return val.reshape(var.shape, order="F")
        if var.shape == ():
            return float(val[0])
        return val


@dataclass
class Plan:
    """A polished open-loop-certified feedback plan from one replan."""
    x: np.ndarray
    gamma: float
    v0x: np.ndarray
    v0u: np.ndarray
    Phi_xw: np.ndarray
    Phi_uw: np.ndarray
    value: float
    violation: float
    iters: int = 0
    solve_time: float = 0.0
    tightened: bool = False

    def rollout_input(self, k, m, n, w_hist):
        """u_k = v0u block k + Phi_uw row block k applied to measured w."""
        u = self.v0u[k * m:(k + 1) * m].copy()
        if k > 0 and w_hist.size:
            cols = min(w_hist.size, k * n)
            u += self.Phi_uw[k * m:(k + 1) * m, :cols] @ w_hist[:cols]
        return u


class _EngineBase:
    """Shared assembly for the persistent replan engines."""

    #: plan certificate tolerance: worst true row violation allowed
    cert_tol = 1e-6

    def __init__(self, problem, margin=5e-4, eps=1e-4, tight_eps=1e-7):
        self.problem = problem
        self.stack = problem.stack
        st = self.stack
        self.n, self.m, self.T = st.model.n, st.model.m, st.T
        self.margin = margin
        self.lift = _SafetyLift(problem)
        self.SH = psd_sqrt(st.Sbar)
        self.ZA = st.Zshift @ st.Ablk
        self.ZB = st.Zshift @ st.Bblk
        self.Ew = np.eye(st.nx)[:, self.n:]
        self.e0 = np.zeros((st.nx, self.n))
        self.e0[:self.n] = np.eye(self.n)
        self._build(eps, tight_eps)

    def reset(self):
        """Drop warm-start state so results do not depend on solve order."""
        self.engine.reset()

    def _response_vars(self):
        st = self.stack
        Phixw = cp.Variable((st.nx, st.nw))
        Phiuw = cp.Variable((st.nu, st.nw))
        v0 = cp.Variable(st.nx + st.nu)
        x0p = cp.Parameter(self.n)
        # runtime knob: a set with an empty interior (e.g. a terminal set
        # that the disturbance fills exactly) admits no margin at all, so
        # solves can fall back to zero
        marginp = cp.Parameter(nonneg=True)
        v0x, v0u = v0[:st.nx], v0[st.nx:]
        cons = [
            Phixw - self.ZA @ Phixw - self.ZB @ Phiuw == self.Ew,
            v0x - self.ZA @ v0x - self.ZB @ v0u == self.e0 @ x0p,
            Phiuw[~self.lift.mask_uw] == 0,
        ]
        cons += self.lift.constraints(v0x, v0u, Phixw, Phiuw, marginp)
        return Phixw, Phiuw, v0, x0p, marginp, cons

    def _extract_polished(self, x, out):
        """Exact-dynamics plan data from a solver point (x0 column rebuilt)."""
        st = self.stack
        _, Phiuw_var, v0_var = self._vars
        v0 = self.engine.extract(v0_var, out["x"])
        Phiuw = self.engine.extract(Phiuw_var, out["x"])
        Phiuw[~self.lift.mask_uw] = 0.0
        v0u = v0[st.nx:]
        v0x, Phixw = propagate_plan(st.model, self.T, x, v0u, Phiuw)
        return v0x, v0u, Phixw, Phiuw

    def _finish_plan(self, out, x, gamma, values, retry):
        v0x, v0u, Phixw, Phiuw = self._extract_polished(x, out)
        viol = self.lift.violation(v0x, v0u, Phixw, Phiuw)
        plan = Plan(x=np.array(x), gamma=gamma, v0x=v0x, v0u=v0u,
                    Phi_xw=Phixw, Phi_uw=Phiuw, value=out["pobj"],
                    violation=viol, iters=out["iters"],
                    solve_time=out["time"], tightened=not retry)
        if viol > self.cert_tol and retry:
            logger.info("plan certificate at %.2e; re-solving tightly", viol)
            out2 = self.engine.solve(values, tight=True)
            if out2["kind"] == "optimal":
                plan2 = self._finish_plan(out2, x, gamma, values,
                                          retry=False)
                plan2.solve_time += out["time"]
                return plan2
        if plan.violation > self.cert_tol:
            raise SolverFailure(
                "plan fails its safety certificate (violation %.2e)"
                % plan.violation)
        return plan

    def _solve_margined(self, values):
        """Loose, then tight, then unmargined-tight; returns (out, values)."""
        out = self.engine.solve(values)
        if out["kind"] != "optimal" or not out["accurate"]:
            out = self.engine.solve(values, tight=True)
        if out["kind"] == "infeasible" and values.get("margin"):
            values = dict(values, margin=0.0)
            out = self.engine.solve(values, tight=True)
        return out, values


class RegretEngine(_EngineBase):
    """Fixed-gamma regret synthesis compiled once for a whole simulation."""

    def _build(self, eps, tight_eps):
        st = self.stack
        nw, nxu = st.nw, st.nx + st.nu
        Hw, hw = self.problem.W_stacked.H, self.problem.W_stacked.h
        _, _, Cww = self.problem.clairvoyant_blocks()
        Phixw, Phiuw, v0, x0p, marginp, cons = self._response_vars()
        eta = cp.Variable(Hw.shape[0], nonneg=True)
        tau = cp.Variable()
        c00p = cp.Parameter()
        c0wp = cp.Parameter(nw)
        gsqp = cp.Parameter(nonneg=True)
        Phiw = cp.vstack([Phixw, Phiuw])
        theta = _theta_matrix(
            tau + c00p, eta @ Hw + c0wp, gsqp * np.eye(nw) + Cww,
            self.SH @ v0, self.SH @ Phiw, nw, nxu)
        cons.append(theta >> 0)
        prob = cp.Problem(cp.Minimize(2 * hw @ eta + tau), cons)
        self._vars = (Phixw, Phiuw, v0)
        self._eta_var = eta
        self.engine = _ConeEngine(
            prob, {"x0": x0p, "c00": c00p, "c0w": c0wp, "gsq": gsqp,
                   "margin": marginp},
            eps=eps, tight_eps=tight_eps)

    def _values(self, x, gamma):
        C00, C0w, _ = self.problem.clairvoyant_blocks()
        return {"x0": x, "c00": float(x @ C00 @ x), "c0w": C0w.T @ x,
                "gsq": gamma ** 2, "margin": self.margin}

    def _certified_value(self, x, gamma, plan, out):
        """Exact certified regret bound of the polished plan, or None.

        Keeps the solver's multiplier eta and closes the certificate in
        exact arithmetic: the minimal tau is a pseudo-inverse quadratic on
        the Schur block, so the returned bound covers the applied policy
        no matter how loosely the solver stopped.  None means the linear
        part escapes the block's range and no tau can close it.
        """
        st = self.stack
        C00, C0w, Cww = self.problem.clairvoyant_blocks()
        Hw, hw = self.problem.W_stacked.H, self.problem.W_stacked.h
        eta = np.maximum(self.engine.extract(self._eta_var, out["x"]), 0.0)
        y0 = self.SH @ np.concatenate([plan.v0x, plan.v0u])
        Pw = self.SH @ np.vstack([plan.Phi_xw, plan.Phi_uw])
        S = gamma ** 2 * np.eye(st.nw) + Cww - Pw.T @ Pw
        r = eta @ Hw + x @ C0w - y0 @ Pw
        lam, U = np.linalg.eigh(S)
        vr = U.T @ r
        pos = lam > 1e-10 * max(1.0, float(lam[-1]))
        if np.any(np.abs(vr[~pos]) > 1e-7 * max(1.0, float(np.abs(r).max()))):
            return None
        tau = float(y0 @ y0) - float(x @ C00 @ x) \
            + float(np.sum(vr[pos] ** 2 / lam[pos]))
        return float(2.0 * hw @ eta + tau)

    def _finish_plan(self, out, x, gamma, values, retry):
        plan = super()._finish_plan(out, x, gamma, values, retry)
        if retry and plan.tightened:
            # the safety retry already recursed; that call certified it
            return plan
        value = self._certified_value(x, gamma, plan, out)
        if value is None and retry:
            out2 = self.engine.solve(values, tight=True)
            if out2["kind"] == "optimal":
                plan2 = self._finish_plan(out2, x, gamma, values,
                                          retry=False)
                plan2.solve_time += out["time"]
                return plan2
        if value is None:
            warnings.warn("plan value kept at solver objective; the "
                          "closed-form certificate did not close",
                          RuntimeWarning)
        else:
            plan.value = value
        return plan

    def _level_certificate(self, x, gamma, out):
        """Verify a candidate policy at the level, independent of the solver.

        Feasibility of gamma from x (eta free, tau free) reduces to a safe
        causal response whose weighted Gram matrix clears gamma^2 I + Cww,
        so the polished candidate either proves the level or proves nothing.
        """
        v0x, v0u, Phixw, Phiuw = self._extract_polished(x, out)
        if self.lift.violation(v0x, v0u, Phixw, Phiuw) > self.cert_tol:
            return False
        _, _, Cww = self.problem.clairvoyant_blocks()
        SHPw = self.SH @ np.vstack([Phixw, Phiuw])
        G = gamma ** 2 * np.eye(self.stack.nw) + Cww - SHPw.T @ SHPw
        return float(np.min(np.linalg.eigvalsh(G))) >= -self.cert_tol

    def feasible(self, x, gamma):
        """Certified feasibility of the level for the current state.

        Near the boundary a loose solve can report a spuriously accurate
        "optimal" (scaled residuals mask an absolute deficit), so solver
        status alone never certifies the feasible side: the candidate must
        pass its own certificate, else the level escalates to the tight
        handle and, failing that too, counts as infeasible.
        """
        x = np.asarray(x, dtype=float)
        for tight in (False, True):
            values = self._values(x, gamma)
            out = self.engine.solve(values, tight=tight)
            if out["kind"] == "infeasible" and values.get("margin"):
                values = dict(values, margin=0.0)
                out = self.engine.solve(values, tight=True)
            if out["kind"] == "infeasible":
                return False
            if out["kind"] == "optimal" and \
                    self._level_certificate(x, gamma, out):
                return True
        warnings.warn("treating unverifiable solve at gamma=%.6g as "
                      "infeasible" % gamma, RuntimeWarning)
        return False

    def plan(self, x, gamma):
        x = np.asarray(x, dtype=float)
        out, values = self._solve_margined(self._values(x, gamma))
        if out["kind"] == "infeasible":
            raise InfeasibleError("no safe policy from the current state at "
                                  "gamma=%.6g" % gamma)
        if out["kind"] != "optimal":
            raise SolverFailure("replan solve ended with %s" % out["kind"])
        return self._finish_plan(out, x, gamma, values, retry=True)

    def value(self, x, gamma, tight=True):
        """Optimal certified-regret value at (x, gamma), no plan polishing."""
        x = np.asarray(x, dtype=float)
        values = self._values(x, gamma)
        out = self.engine.solve(values, tight=tight)
        if out["kind"] == "infeasible" and values.get("margin"):
            out = self.engine.solve(dict(values, margin=0.0), tight=True)
        if out["kind"] == "infeasible":
            raise InfeasibleError("value undefined: infeasible at gamma=%.6g"
                                  % gamma)
        if out["kind"] != "optimal":
            raise SolverFailure("value solve ended with %s" % out["kind"])
        return out["pobj"]

    def min_gamma(self, x, tol=1e-3):
        x = np.asarray(x, dtype=float)
        return _bisect_feasibility(lambda g: self.feasible(x, g), tol)


class H2Engine(_EngineBase):
    """Expected-cost synthesis compiled once (quadratic cone, no LMI)."""

    def _build(self, eps, tight_eps):
        st = self.stack
        Phixw, Phiuw, v0, x0p, marginp, cons = self._response_vars()
        Phiw = cp.vstack([Phixw, Phiuw])
        cost = cp.sum_squares(self.SH @ cp.hstack(
            [cp.reshape(v0, (st.nx + st.nu, 1), order="C"), Phiw]))
        prob = cp.Problem(cp.Minimize(cost), cons)
        self._vars = (Phixw, Phiuw, v0)
        self.engine = _ConeEngine(prob, {"x0": x0p, "margin": marginp},
                                  eps=eps, tight_eps=tight_eps)

    def _values(self, x, gamma=None):
        return {"x0": x, "margin": self.margin}

    def plan(self, x, gamma=None):
        x = np.asarray(x, dtype=float)
        out, values = self._solve_margined(self._values(x))
        if out["kind"] == "infeasible":
            raise InfeasibleError("no safe policy from the current state")
        if out["kind"] != "optimal":
            raise SolverFailure("replan solve ended with %s" % out["kind"])
        return self._finish_plan(out, x, np.nan, values, retry=True)


class HinfEngine(_EngineBase):
    """Two-stage worst-case-gain synthesis compiled once per stage.

    The gain stage only pins a scalar level that the policy stage then
    re-certifies with headroom, so it runs at a looser tolerance; tight
    accuracy there costs tens of thousands of iterations at the (highly
    degenerate) optimum and buys nothing.
    """

    def __init__(self, problem, margin=5e-4, eps=1e-4, tight_eps=1e-7,
                 gain_eps=1e-3):
        self.gain_eps = gain_eps
        super().__init__(problem, margin=margin, eps=eps,
                         tight_eps=tight_eps)

    def _build(self, eps, tight_eps):
        st = self.stack
        nw, nxu = st.nw, st.nx + st.nu
        Hw, hw = self.problem.W_stacked.H, self.problem.W_stacked.h

        Phixw, Phiuw, v0, x0p, marginp, cons = self._response_vars()
        gsq = cp.Variable(nonneg=True)
        Phiw = cp.vstack([Phixw, Phiuw])
        lmi = cp.bmat([[gsq * np.eye(nw), (self.SH @ Phiw).T],
                       [self.SH @ Phiw, np.eye(nxu)]])
        prob1 = cp.Problem(cp.Minimize(gsq), cons + [lmi >> 0])
        self._gsq = gsq
        self.gain_engine = _ConeEngine(prob1,
                                       {"x0": x0p, "margin": marginp},
                                       eps=self.gain_eps,
                                       tight_eps=tight_eps)

        Phixw, Phiuw, v0, x0p, marginp, cons = self._response_vars()
        eta = cp.Variable(Hw.shape[0], nonneg=True)
        tau = cp.Variable()
        gsqp = cp.Parameter(nonneg=True)
        Phiw = cp.vstack([Phixw, Phiuw])
        theta = _theta_matrix(
            tau, eta @ Hw, gsqp * np.eye(nw),
            self.SH @ v0, self.SH @ Phiw, nw, nxu)
        prob2 = cp.Problem(cp.Minimize(2 * hw @ eta + tau),
                           cons + [theta >> 0])
        self._vars = (Phixw, Phiuw, v0)
        self.engine = _ConeEngine(prob2, {"x0": x0p, "gsq": gsqp,
                                          "margin": marginp},
                                  eps=eps, tight_eps=tight_eps)

    def reset(self):
        self.engine.reset()
        self.gain_engine.reset()

    def _values(self, x, gamma):
        return {"x0": x, "gsq": gamma ** 2, "margin": self.margin}

    def plan(self, x, gamma=None):
        x = np.asarray(x, dtype=float)
        values1 = {"x0": x, "margin": self.margin}
        out1 = self.gain_engine.solve(values1)
        if out1["kind"] != "optimal":
            out1 = self.gain_engine.solve(values1, tight=True)
        if out1["kind"] == "infeasible":
            values1 = dict(values1, margin=0.0)
            out1 = self.gain_engine.solve(values1, tight=True)
        if out1["kind"] == "infeasible":
            raise InfeasibleError("no safe policy from the current state")
        if out1["kind"] != "optimal":
            raise SolverFailure("gain stage ended with %s" % out1["kind"])
        gsq_star = max(self.gain_engine.extract(self._gsq, out1["x"]), 0.0)
        # headroom over the coarse gain estimate; the policy stage certifies
        # the inflated level, which is what the plan reports.  Too little
        # headroom parks the policy stage on its feasibility boundary and
        # costs thousands of iterations.
        gsq_used = gsq_star * (1 + 40 * self.gain_eps) + 1e-9
        margin2 = values1["margin"]
        out2 = self.engine.solve({"x0": x, "gsq": gsq_used,
                                  "margin": margin2})
        if out2["kind"] == "infeasible":
            for _ in range(3):
                gsq_used *= 1.05
                out2 = self.engine.solve({"x0": x, "gsq": gsq_used,
                                          "margin": margin2})
                if out2["kind"] == "optimal":
                    break
        values2 = {"x0": x, "gsq": gsq_used, "margin": margin2}
        if out2["kind"] != "optimal":
            out2 = self.engine.solve(values2, tight=True)
        if out2["kind"] == "infeasible" and margin2:
            values2 = dict(values2, margin=0.0)
            out2 = self.engine.solve(values2, tight=True)
        if out2["kind"] != "optimal":
            raise SolverFailure("policy stage ended with %s" % out2["kind"])
        plan = self._finish_plan(out2, x, float(np.sqrt(gsq_used)),
                                 values2, retry=True)
        plan.solve_time += out1["time"]
        return plan
