"""Clairvoyant (noncausal) optimal policy, its cost matrix and monotonicity checks.

The clairvoyant controller sees the whole disturbance sequence in advance and
minimizes the finite-horizon cost without terminal penalty. Its cost is the
quadratic form delta' C_T delta; C_T and the noncausal gain are closed-form.
"""

from dataclasses import dataclass

import numpy as np
import cvxpy as cp

from .lti import HorizonStack, simulate, _symmetrize, psd_sqrt


@dataclass(frozen=True)
class ClairvoyantData:
    C_T: np.ndarray
    gain_noncausal: np.ndarray
    T: int
    n: int

    def blocks(self, i1, i2, j1, j2):
        """Submatrix of C_T in block units of size n (inclusive ranges)."""
        n = self.n
        return self.C_T[i1 * n:(i2 + 1) * n, j1 * n:(j2 + 1) * n]


@dataclass(frozen=True)
class BlockRange:
    i1: int
    i2: int
    j1: int
    j2: int

    def validate(self, T):
        ok = 0 <= self.i1 <= self.i2 <= T and 0 <= self.j1 <= self.j2 <= T
        if not ok:
            raise IndexError(f"block range {self} outside [0, {T}]")


def clairvoyant_gain(stack: HorizonStack) -> ClairvoyantData:
    """Noncausal optimal gain and cost matrix C_T.

    gain = -(Rblk + F'Qblk F)^{-1} F'Qblk G and
    C_T = G'(Qblk - Qblk F (Rblk + F'Qblk F)^{-1} F'Qblk) G.
    The second form is the push-through rearrangement of the inverse so that
    only the PD matrix (Rblk + F'Qblk F) is factorized.
    """
    F, G, Qblk, Rblk = stack.F, stack.G, stack.Qblk, stack.Rblk
    Hmat = _symmetrize(Rblk + F.T @ Qblk @ F)
    # PD by R > 0; factorize once for both the gain and the cost
    try:
        cho = np.linalg.cholesky(Hmat)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            "Rblk + F'QF not positive definite; check model costs") from exc
    QF = Qblk @ F
    gain = -np.linalg.solve(cho.T, np.linalg.solve(cho, QF.T @ G))
    C = G.T @ (Qblk @ G + QF @ gain)
    C = _symmetrize(C)
    return ClairvoyantData(C_T=C, gain_noncausal=gain, T=stack.T, n=stack.n)


def clairvoyant_cost(data: ClairvoyantData, delta) -> float:
    delta = np.asarray(delta, dtype=float).ravel()
    return float(delta @ data.C_T @ delta)


def clairvoyant_sls(stack: HorizonStack, solver=cp.SCS, **solver_kwargs):
    """Noncausal closed-loop responses by convex optimization.

    Minimizes || S^(1/2) [Phi_x; Phi_u] ||_F^2 over the achievability
    subspace without causal sparsity. Agrees with clairvoyant_gain.
    """
    nx, nu = stack.nx, stack.nu
    Phi_x = cp.Variable((nx, nx))
    Phi_u = cp.Variable((nu, nx))
    ZA = stack.Zshift @ stack.Ablk
    ZB = stack.Zshift @ stack.Bblk
    Sh = psd_sqrt(stack.S)
    obj = cp.Minimize(cp.sum_squares(Sh @ cp.vstack([Phi_x, Phi_u])))
    cons = [Phi_x - ZA @ Phi_x - ZB @ Phi_u == np.eye(nx)]
    prob = cp.Problem(obj, cons)
    kwargs = {"eps_abs": 1e-9, "eps_rel": 1e-9} if solver == cp.SCS else {}
    kwargs.update(solver_kwargs)
    prob.solve(solver=solver, **kwargs)
    if prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        raise RuntimeError(f"clairvoyant SLS solve failed: {prob.status}")
    return Phi_x.value, Phi_u.value, prob.value


def extract_block(data: ClairvoyantData, rng: BlockRange) -> np.ndarray:
    rng.validate(data.T)
    return data.blocks(rng.i1, rng.i2, rng.j1, rng.j2).copy()


def check_monotonicity(model, T):
    """Eigenvalue checks of the horizon-ordering chain for C_T vs C_{T+1}.

    Returns a dict of margins; all four must be >= -1e-8 for the chain
    C_{T+1}^{[1:T+1]} <= C_T <= C_{T+1}^{[0:T]} and the lambda_max/min
    monotonicity to hold.
    """
    from .lti import build_stack
    sT = build_stack(model, T)
    sT1 = build_stack(model, T + 1)
    CT = clairvoyant_gain(sT)
    CT1 = clairvoyant_gain(sT1)
    n = model.n
    nT = (T + 1) * n
    upper = CT1.C_T[:nT, :nT] - CT.C_T          # C_{T+1}^{[0:T]} - C_T >= 0
    lower = CT.C_T - CT1.C_T[n:, n:]            # C_T - C_{T+1}^{[1:T+1]} >= 0
    lam_T = np.linalg.eigvalsh(CT.C_T)
    lam_T1 = np.linalg.eigvalsh(CT1.C_T)
    report = {
        "min_eig_upper": float(np.min(np.linalg.eigvalsh(_symmetrize(upper)))),
        "min_eig_lower": float(np.min(np.linalg.eigvalsh(_symmetrize(lower)))),
        "lambda_max_margin": float(lam_T1[-1] - lam_T[-1]),
        "lambda_min_margin": float(lam_T[0] - lam_T1[0]),
    }
    report["all_pass"] = all(v >= -1e-8 for v in report.values())
    return report
