"""Preconditioned GMRES with a pluggable inner product."""
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DimensionMismatch, GeneoError


class Norm(str, Enum):
    EUCLIDEAN = "euclidean"
    ENERGY = "energy"


class Orientation(str, Enum):
    LEFT = "left"
    RIGHT = "right"


@dataclass
class GmresConfig:
    rtol: float = 1e-6
    max_iters: int = 1000
    restart: int | None = None
    norm: Norm = Norm.EUCLIDEAN
    orientation: Orientation = Orientation.RIGHT

    def __post_init__(self):
        self.norm = Norm(self.norm)
        self.orientation = Orientation(self.orientation)
        if not 0 < self.rtol < 1:
            raise GeneoError(f"rtol must lie in (0, 1), got {self.rtol}")
        if self.max_iters < 1:
            raise GeneoError(f"max_iters must be positive, got {self.max_iters}")
        if self.restart is not None and self.restart < 1:
            raise GeneoError(f"restart must be positive, got {self.restart}")


@dataclass
class SolveReport:
    iterations: int
    residual_history: np.ndarray
    """Relative residual norms, entry 0 for the initial guess."""
    converged: bool
    coarse_size: int = 0
    wall_time: float = 0.0
    true_residual: float = float("nan")
    breakdown: bool = False
    extra: dict = field(default_factory=dict)


def true_residual_check(B, f, x):
    """``|f - B x| / |f|`` in the Euclidean norm."""
    fn = np.linalg.norm(f)
    return np.linalg.norm(f - B @ x) / fn if fn else np.linalg.norm(B @ x)


def _identity(v):
    return v


def gmres(B, f, P=None, cfg=None, energy_matrix=None, x0=None):
    """Solve ``B x = f``; returns ``(x, SolveReport)``.

    Right orientation minimizes the true residual, left orientation the
    preconditioned one. With ``Norm.ENERGY`` the Arnoldi basis is orthonormal
    in ``<u, v> = u^T A v`` for the SPD ``energy_matrix`` ``A``, so the
    residual is minimized in that norm. Orthogonalization is modified
    Gram-Schmidt, repeated once when the vector loses more than ``1 - 1/sqrt 2``
    of its norm. Running out of iterations is not an error: the report comes
    back with ``converged = False``.
    """
    cfg = cfg or GmresConfig()
    t0 = time.perf_counter()
    f = np.asarray(f, dtype=float)
    n = B.shape[0]
    if f.shape != (n,):
        raise DimensionMismatch(f"rhs of shape {f.shape} for a {B.shape} matrix")
    prec = _identity if P is None else P
    if cfg.norm is Norm.ENERGY:
        if energy_matrix is None:
            raise GeneoError("energy-norm GMRES needs the SPD stiffness matrix")
        A = energy_matrix

        def dot(u, v):
            return u @ (A @ v)
    else:
        def dot(u, v):
            return u @ v

    def norm(u):
        return np.sqrt(max(dot(u, u), 0.0))

    right = cfg.orientation is Orientation.RIGHT
    if right:
        def op(v):
            return B @ prec(v)
        rhs = f
    else:
        def op(v):
            return prec(B @ v)
        rhs = prec(f)

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    rhs_norm = norm(rhs)
    if rhs_norm == 0:
        report = SolveReport(0, np.array([0.0]), True, getattr(P, "coarse_size", 0),
                             time.perf_counter() - t0, 0.0)
        return np.zeros(n), report

    def residual(xk):
        r = f - B @ xk
        return r if right else prec(r)

    r = residual(x) if x0 is not None else rhs.copy()
    beta = norm(r)
    history = [beta / rhs_norm]
    iterations = 0
    converged = history[0] <= cfg.rtol
    breakdown = False
    m_max = cfg.restart or cfg.max_iters

    while not converged and iterations < cfg.max_iters:
        m = min(m_max, cfg.max_iters - iterations)
        V = np.zeros((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k = 0
        while k < m:
            w = op(V[k])
            w_norm0 = norm(w)
            for sweep in range(2):
                for i in range(k + 1):
                    hik = dot(V[i], w)
                    H[i, k] += hik
                    w -= hik * V[i]
                w_norm = norm(w)
                if w_norm > w_norm0 / np.sqrt(2.0):
                    break
                w_norm0 = w_norm
            H[k + 1, k] = w_norm
            for i in range(k):
                t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
                H[i, k] = t
            denom = np.hypot(H[k, k], H[k + 1, k])
            if denom == 0.0:
                breakdown = True
                break
            cs[k], sn[k] = H[k, k] / denom, H[k + 1, k] / denom
            H[k, k] = denom
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            k += 1
            iterations += 1
            history.append(abs(g[k]) / rhs_norm)
            if history[-1] <= cfg.rtol:
                converged = True
                break
            if w_norm <= np.finfo(float).eps * rhs_norm:
                # invariant subspace reached: the least-squares solution is exact
                converged = True
                break
            V[k] = w / w_norm
        if k == 0:
            break
        y = np.linalg.solve(np.triu(H[:k, :k]), g[:k]) if k else np.zeros(0)
        update = y @ V[:k]
        x = x + (prec(update) if right else update)
        if not converged and iterations < cfg.max_iters:
            r = residual(x)
            beta = norm(r)

    report = SolveReport(
        iterations=iterations,
        residual_history=np.array(history),
        converged=bool(converged),
        coarse_size=getattr(P, "coarse_size", 0),
        wall_time=time.perf_counter() - t0,
        true_residual=true_residual_check(B, f, x),
        breakdown=breakdown,
    )
    return x, report
