"""Terminal ingredients: H2 and H-infinity Riccati solutions and gamma_f bisection.

The H-infinity equation is the sign-indefinite DARE

    P = Q + A'Pbar A - A'Pbar B (R + B'Pbar B)^{-1} B'Pbar A,
    Pbar = P + P (gamma_f^2 I - P)^{-1} P,

solved by fixed-point iteration from P = Q. Feasibility of a gamma_f level
requires convergence, gamma_f^2 I - P > 0 at the fixed point, and Schur
stability of A + B K_f with K_f = -(R + B'Pbar B)^{-1} B'Pbar A.
"""

from dataclasses import dataclass

import numpy as np

from .lti import SystemModel, _symmetrize


@dataclass(frozen=True)
class TerminalIngredients:
    P: np.ndarray
    Pbar: np.ndarray
    K_f: np.ndarray
    gamma_f: float
    P2: np.ndarray
    K2: np.ndarray


@dataclass(frozen=True)
class HinfSolution:
    feasible: bool
    P: np.ndarray = None
    Pbar: np.ndarray = None
    K_f: np.ndarray = None
    reason: str = ""


def _pbh_stabilizable(A, B, tol=1e-9):
    """PBH: rank [A - lambda I, B] = n for every |lambda| >= 1 eigenvalue."""
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if abs(lam) >= 1 - tol:
            M = np.hstack([A - lam * np.eye(n), B])
            if np.linalg.matrix_rank(M, tol=1e-10) < n:
                return False, lam
    return True, None


def _pbh_observable_unit_circle(A, Q, tol=1e-9):
    """PBH for (A, Q^(1/2)) at eigenvalues on the unit circle."""
    n = A.shape[0]
    lamQ, V = np.linalg.eigh(_symmetrize(Q))
    Qh = V @ np.diag(np.sqrt(np.clip(lamQ, 0, None))) @ V.T
    for lam in np.linalg.eigvals(A):
        if 1 - tol <= abs(lam) <= 1 + tol:
            M = np.vstack([A - lam * np.eye(n), Qh])
            if np.linalg.matrix_rank(M, tol=1e-10) < n:
                return False, lam
    return True, None


def dare_residual(model: SystemModel, P, Pbar):
    """Relative Frobenius residual of the sign-indefinite DARE."""
    A, B, Q, R = model.A, model.B, model.Q, model.R
    BtPB = R + B.T @ Pbar @ B
    rhs = Q + A.T @ Pbar @ A - A.T @ Pbar @ B @ np.linalg.solve(BtPB, B.T @ Pbar @ A)
    return np.linalg.norm(P - rhs) / max(np.linalg.norm(P), 1.0)


def solve_dare_h2(model: SystemModel, max_iter=10000, tol=1e-12):
    """Sign-definite DARE by fixed-point iteration from P = Q.

    Returns (P2, K2) with K2 = (R + B'P2 B)^{-1} B'P2 A applied
    subtractively, so A - B K2 is Schur.
    """
    A, B, Q, R = model.A, model.B, model.Q, model.R
    ok, lam = _pbh_stabilizable(A, B)
    if not ok:
        raise ValueError(f"(A, B) not stabilizable: PBH fails at lambda={lam}")
    ok, lam = _pbh_observable_unit_circle(A, Q)
    if not ok:
        raise ValueError(
            f"(A, Q^1/2) not observable on the unit circle: PBH fails at lambda={lam}")
    P = Q.copy()
    for _ in range(max_iter):
        BtPB = R + B.T @ P @ B
        Pn = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(BtPB, B.T @ P @ A)
        Pn = _symmetrize(Pn)
        if np.linalg.norm(Pn - P) <= tol * max(np.linalg.norm(Pn), 1.0):
            P = Pn
            break
        P = Pn
    else:
        raise RuntimeError("H2 Riccati iteration did not converge")
    K2 = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    if np.max(np.abs(np.linalg.eigvals(A - B @ K2))) >= 1:
        raise RuntimeError("H2 closed loop not Schur; inputs are inconsistent")
    return _symmetrize(P), K2


def solve_dare_hinf(model: SystemModel, gamma_f, max_iter=10000,
                    tol=1e-12) -> HinfSolution:
    """Sign-indefinite DARE at a fixed gamma_f; infeasibility is a result.

    Iterates P <- Q + A'Pbar A - ... from P = Q, applying the Pbar
    substitution each step. Any valid solution satisfies P >= Q, so the
    monotone iteration from Q cannot lose definiteness of gamma^2 I - P
    when a solution exists; losing it certifies infeasibility.
    """
    if gamma_f <= 0:
        raise ValueError("gamma_f must be positive")
    A, B, Q, R = model.A, model.B, model.Q, model.R
    n = A.shape[0]
    g2 = gamma_f ** 2
    P = Q.copy()
    for _ in range(max_iter):
        M = g2 * np.eye(n) - P
        lam_min = np.min(np.linalg.eigvalsh(_symmetrize(M)))
        if lam_min <= 1e-12:
            return HinfSolution(False, reason="gamma^2 I - P lost definiteness")
        Pbar = _symmetrize(P + P @ np.linalg.solve(M, P))
        BtPB = R + B.T @ Pbar @ B
        if np.min(np.linalg.eigvalsh(_symmetrize(BtPB))) <= 0:
            return HinfSolution(False, reason="R + B'Pbar B lost definiteness")
        Pn = Q + A.T @ Pbar @ A - A.T @ Pbar @ B @ np.linalg.solve(
            BtPB, B.T @ Pbar @ A)
        Pn = _symmetrize(Pn)
        if np.linalg.norm(Pn - P) <= tol * max(np.linalg.norm(Pn), 1.0):
            P = Pn
            break
        if not np.all(np.isfinite(Pn)):
            return HinfSolution(False, reason="iteration diverged")
        P = Pn
    else:
        return HinfSolution(False, reason="no convergence within iteration cap")

    M = g2 * np.eye(n) - P
    if np.min(np.linalg.eigvalsh(_symmetrize(M))) <= 0:
        return HinfSolution(False, reason="gamma^2 I - P not PD at fixed point")
    Pbar = _symmetrize(P + P @ np.linalg.solve(M, P))
    K_f = -np.linalg.solve(R + B.T @ Pbar @ B, B.T @ Pbar @ A)
    if np.max(np.abs(np.linalg.eigvals(A + B @ K_f))) >= 1:
        return HinfSolution(False, reason="A + B K_f not Schur")
    return HinfSolution(True, P=P, Pbar=Pbar, K_f=K_f)


def hinf_feasible(model: SystemModel, gamma_f) -> bool:
    return solve_dare_hinf(model, gamma_f).feasible


def bisect_gamma_f(model: SystemModel, tol=1e-3, predicate=None):
    """Smallest feasible attenuation level by bisection.

    predicate(gamma) -> bool defaults to Riccati feasibility; a caller can
    tighten it (e.g. to also require terminal-set admissibility). Returns
    (gamma_f, TerminalIngredients) at the feasible endpoint.
    """
    if tol <= 0:
        raise ValueError("bisection tolerance must be positive")
    feas = predicate if predicate is not None else (
        lambda g: hinf_feasible(model, g))
    hi = 1.0
    lo = 0.0
    while not feas(hi):
        lo = hi
        hi *= 2.0
        if hi > 2 ** 16:
            raise RuntimeError("no feasible gamma_f below 2^16")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if feas(mid):
            hi = mid
        else:
            lo = mid
    sol = solve_dare_hinf(model, hi)
    if not sol.feasible:
        # predicate may be stricter than Riccati feasibility; never the reverse
        raise RuntimeError(f"bisection endpoint infeasible: {sol.reason}")
    P2, K2 = solve_dare_h2(model)
    ingredients = TerminalIngredients(P=sol.P, Pbar=sol.Pbar, K_f=sol.K_f,
                                      gamma_f=hi, P2=P2, K2=K2)
    return hi, ingredients


def dissipation_gap(model: SystemModel, ing: TerminalIngredients, x, w_grid):
    """max_w [V_f(x+) - V_f(x) + stage cost - gamma_f^2 |w|^2] over a grid.

    Zero (to tolerance) for the Pbar gain; the analytic maximizer is
    w* = (gamma_f^2 I - P)^{-1} P A_f x.
    """
    A, B, Q, R = model.A, model.B, model.Q, model.R
    P, K, g2 = ing.P, ing.K_f, ing.gamma_f ** 2
    Af = A + B @ K
    x = np.asarray(x, dtype=float).ravel()
    u = K @ x
    base = x @ Q @ x + u @ R @ u - x @ P @ x
    vals = []
    for w in w_grid:
        xn = Af @ x + np.asarray(w, dtype=float)
        vals.append(base + xn @ P @ xn - g2 * float(np.dot(w, w)))
    return max(vals)


def dissipation_maximizer(model: SystemModel, ing: TerminalIngredients, x):
    A, B = model.A, model.B
    P, g2 = ing.P, ing.gamma_f ** 2
    Af = A + B @ ing.K_f
    n = A.shape[0]
    return np.linalg.solve(g2 * np.eye(n) - P, P @ (Af @ np.asarray(x).ravel()))
