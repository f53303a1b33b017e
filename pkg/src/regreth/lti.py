"""Plant description, horizon-T block lifting and polytope primitives.

Everything downstream (clairvoyant benchmark, terminal ingredients, the
policy SDPs and the receding horizon simulator) works with the lifted
operators built here. Conventions: stacked state x = col(x_0..x_T) has
length (T+1)n, stacked input u = col(u_0..u_{T-1}) has length Tm, and
delta = col(x_0, w_0..w_{T-1}) collects the initial state and the
disturbances, so x = F u + G delta.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla


class DimensionError(ValueError):
    """Raised when an operator or vector has an inconsistent shape."""

    def __init__(self, operator, expected, got):
        self.operator = operator
        super().__init__(f"{operator}: expected shape {expected}, got {got}")


def _symmetrize(M):
    return 0.5 * (M + M.T)


def psd_sqrt(M):
    """Symmetric PSD square root with eigenvalue clamping at zero.

    Block cost matrices carry zero terminal blocks, so Cholesky is not
    available; the eigendecomposition route handles the semidefinite case.
    """
    vals, vecs = np.linalg.eigh(_symmetrize(np.asarray(M, dtype=float)))
    vals = np.clip(vals, 0.0, None)
    return _symmetrize(vecs @ np.diag(np.sqrt(vals)) @ vecs.T)


@dataclass(frozen=True)
class SystemModel:
    """LTI plant x+ = Ax + Bu + w with stage cost x'Qx + u'Ru."""

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        n, m = A.shape[0], B.shape[1]
        if A.shape != (n, n):
            raise DimensionError("A", (n, n), A.shape)
        if B.shape != (n, m):
            raise DimensionError("B", (n, m), B.shape)
        if Q.shape != (n, n):
            raise DimensionError("Q", (n, n), Q.shape)
        if R.shape != (m, m):
            raise DimensionError("R", (m, m), R.shape)
        # Q PSD, R PD (symmetric up to fp noise)
        if not np.allclose(Q, Q.T, atol=1e-10):
            raise ValueError("Q must be symmetric")
        if not np.allclose(R, R.T, atol=1e-10):
            raise ValueError("R must be symmetric")
        if np.min(np.linalg.eigvalsh(_symmetrize(Q))) < -1e-10:
            raise ValueError("Q must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(_symmetrize(R))) <= 0:
            raise ValueError("R must be positive definite")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]


@dataclass(frozen=True)
class HorizonStack:
    """All horizon-T lifted operators for one (model, T, P) triple."""

    model: SystemModel
    T: int
    P: np.ndarray
    Zshift: np.ndarray
    Ablk: np.ndarray
    Bblk: np.ndarray
    F: np.ndarray
    G: np.ndarray
    Qblk: np.ndarray
    Qbar: np.ndarray
    Rblk: np.ndarray
    S: np.ndarray
    Sbar: np.ndarray

    @property
    def n(self):
        return self.model.n

    @property
    def m(self):
        return self.model.m

    @property
    def nx(self):
        """Stacked state length (T+1)n."""
        return (self.T + 1) * self.n

    @property
    def nu(self):
        """Stacked input length Tm."""
        return self.T * self.m

    @property
    def nw(self):
        """Stacked disturbance length Tn."""
        return self.T * self.n


def build_stack(model: SystemModel, T: int, P=None) -> HorizonStack:
    """Assemble the lifted operators for horizon T with terminal weight P.

    G is computed by forward block substitution: (Zshift Ablk) is nilpotent,
    so G = sum_k (Zshift Ablk)^k terminates after T steps and is exact.
    """
    if T < 1:
        raise ValueError("horizon T must be >= 1")
    n, m = model.n, model.m
    if P is None:
        P = np.zeros((n, n))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if P.shape != (n, n):
        raise DimensionError("P", (n, n), P.shape)
    if np.min(np.linalg.eigvalsh(_symmetrize(P))) < -1e-10:
        raise ValueError("terminal weight P must be positive semidefinite")

    nx = (T + 1) * n
    Zshift = np.zeros((nx, nx))
    for i in range(T):
        Zshift[(i + 1) * n:(i + 2) * n, i * n:(i + 1) * n] = np.eye(n)
    Ablk = sla.block_diag(*([model.A] * (T + 1)))
    # inputs exist for t = 0..T-1 only; pad the terminal block with zeros
    Bblk = np.zeros((nx, T * m))
    for i in range(T):
        Bblk[i * n:(i + 1) * n, i * m:(i + 1) * m] = model.B

    ZA = Zshift @ Ablk
    G = np.eye(nx)
    # forward substitution: row block i of G = A^(i-j) on block column j <= i
    power = np.eye(nx)
    for _ in range(T):
        power = ZA @ power
        G = G + power
    F = G @ Zshift @ Bblk

    Qblk = sla.block_diag(*([model.Q] * T), np.zeros((n, n)))
    Qbar = sla.block_diag(*([model.Q] * T), P)
    Rblk = sla.block_diag(*([model.R] * T))
    S = sla.block_diag(Qblk, Rblk)
    Sbar = sla.block_diag(Qbar, Rblk)
    return HorizonStack(model=model, T=T, P=P, Zshift=Zshift, Ablk=Ablk,
                        Bblk=Bblk, F=F, G=G, Qblk=Qblk, Qbar=Qbar, Rblk=Rblk,
                        S=S, Sbar=Sbar)


@dataclass(frozen=True)
class Polytope:
    """Half-space set {v : Hv <= h}."""

    H: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        h = np.asarray(self.h, dtype=float).ravel()
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "h", h)
        if H.shape[0] != h.shape[0]:
            raise DimensionError("h", (H.shape[0],), h.shape)

    @property
    def d(self):
        return self.H.shape[1]

    @property
    def nrows(self):
        return self.H.shape[0]

    def contains(self, v, tol=1e-9):
        return bool(np.all(self.H @ np.asarray(v, dtype=float) <= self.h + tol))


def box_polytope(bound: float, d: int) -> Polytope:
    """Inf-norm ball {v : ||v||_inf <= bound} as 2d half-spaces."""
    if bound <= 0:
        raise ValueError("bound must be positive")
    H = np.vstack([np.eye(d), -np.eye(d)])
    h = bound * np.ones(2 * d)
    return Polytope(H, h)


def stack_polytope(stage: Polytope, count: int) -> Polytope:
    """Product set stage^count in block-diagonal half-space form."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if count == 1:
        return Polytope(stage.H.copy(), stage.h.copy())
    H = sla.block_diag(*([stage.H] * count))
    h = np.tile(stage.h, count)
    return Polytope(H, h)


def cross_polytope(a: Polytope, b: Polytope) -> Polytope:
    """Cartesian product {(x, y) : x in a, y in b}."""
    H = sla.block_diag(a.H, b.H)
    h = np.concatenate([a.h, b.h])
    return Polytope(H, h)


@dataclass(frozen=True)
class StackedSignal:
    """delta = col(x0, w) of length (T+1)n."""

    delta: np.ndarray
    n: int

    def __post_init__(self):
        delta = np.asarray(self.delta, dtype=float).ravel()
        object.__setattr__(self, "delta", delta)
        if delta.shape[0] % self.n != 0 or delta.shape[0] < 2 * self.n:
            raise DimensionError("delta", f"(k*{self.n},) with k >= 2",
                                 delta.shape)

    @property
    def x0(self):
        return self.delta[:self.n]

    @property
    def w(self):
        return self.delta[self.n:]


def simulate(model: SystemModel, x0, u_seq, w_seq):
    """Roll the dynamics forward; returns stacked states col(x_0..x_T)."""
    x0 = np.asarray(x0, dtype=float).ravel()
    u_seq = np.asarray(u_seq, dtype=float).reshape(-1, model.m)
    w_seq = np.asarray(w_seq, dtype=float).reshape(-1, model.n)
    T = u_seq.shape[0]
    if w_seq.shape[0] != T:
        raise DimensionError("w_seq", (T, model.n), w_seq.shape)
    xs = [x0]
    for t in range(T):
        xs.append(model.A @ xs[-1] + model.B @ u_seq[t] + w_seq[t])
    return np.concatenate(xs)


def trajectory_cost(stack: HorizonStack, x_stacked, u_stacked, terminal=False):
    """Sum of stage costs; with terminal=True adds x_T' P x_T."""
    Sm = stack.Sbar if terminal else stack.S
    z = np.concatenate([np.asarray(x_stacked).ravel(),
                        np.asarray(u_stacked).ravel()])
    return float(z @ Sm @ z)
