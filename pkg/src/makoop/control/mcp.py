"""Box-constrained affine mixed complementarity problems.

Find ``z`` in ``[lb, ub]`` such that, with ``F = M z + q``, every component is
either strictly inside its box with ``F_k = 0``, at ``lb_k`` with ``F_k >= 0``,
or at ``ub_k`` with ``F_k <= 0``. Bounds may be infinite.

The solver is a semismooth Newton method on the Fischer-Burmeister
reformulation ``Phi(z) = 0`` with

    phi(a, b) = sqrt(a^2 + b^2) - a - b      (zero iff a >= 0, b >= 0, a b = 0)

    free:        Phi = F
    lower only:  Phi = phi(z - lb, F)
    upper only:  Phi = phi(ub - z, -F)
    both:        Phi = phi(z - lb, phi(ub - z, -F))

globalised by an Armijo backtracking search on ``|Phi|^2 / 2``.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import ConvergenceError

log = logging.getLogger(__name__)

_DEGENERATE = 1.0 / np.sqrt(2.0)


@dataclass
class AffineMCP:
    M: sp.csr_matrix
    q: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.M = sp.csr_matrix(self.M, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        n = self.M.shape[0]
        self.lb = np.broadcast_to(np.asarray(self.lb, dtype=float), (n,)).copy()
        self.ub = np.broadcast_to(np.asarray(self.ub, dtype=float), (n,)).copy()
        if self.M.shape != (n, n) or self.q.shape != (n,):
            raise ValueError("M must be square and match q")
        if np.any(self.lb > self.ub):
            raise ValueError("lb > ub")

    @property
    def size(self) -> int:
        return self.q.shape[0]

    def F(self, z):
        return self.M @ z + self.q


@dataclass
class MCPResult:
    z: np.ndarray
    F: np.ndarray
    residual: float
    iterations: int
    wall_time: float
    converged: bool
    regularized: bool = False
    history: list = field(default_factory=list)


def _phi(a, b):
    r = np.hypot(a, b)
    val = r - a - b
    safe = r > 0
    ra = np.where(safe, a / np.where(safe, r, 1.0), _DEGENERATE)
    rb = np.where(safe, b / np.where(safe, r, 1.0), _DEGENERATE)
    return val, ra - 1.0, rb - 1.0


def fb_residual(mcp: AffineMCP, z, F=None, with_jacobian=False):
    """Return ``Phi(z)`` and, optionally, the diagonal factors ``(da, db)`` of one
    generalized Jacobian element ``J = diag(da) + diag(db) M``."""
    F = mcp.F(z) if F is None else F
    lb, ub = mcp.lb, mcp.ub
    has_l, has_u = np.isfinite(lb), np.isfinite(ub)
    phi = np.empty_like(z)
    da = np.zeros_like(z)
    db = np.zeros_like(z)

    free = ~has_l & ~has_u
    phi[free] = F[free]
    db[free] = 1.0

    lo = has_l & ~has_u
    v, pa, pb = _phi(z[lo] - lb[lo], F[lo])
    phi[lo], da[lo], db[lo] = v, pa, pb

    up = ~has_l & has_u
    v, pa, pb = _phi(ub[up] - z[up], -F[up])
    phi[up], da[up], db[up] = v, -pa, -pb

    bo = has_l & has_u
    g, ga, gb = _phi(ub[bo] - z[bo], -F[bo])
    v, pa, pb = _phi(z[bo] - lb[bo], g)
    phi[bo] = v
    da[bo] = pa - pb * ga
    db[bo] = -pb * gb

    if with_jacobian:
        return phi, da, db
    return phi


def _newton_direction(J, rhs, reg):
    A = J if reg == 0 else J + reg * sp.identity(J.shape[0], format="csc")
    try:
        d = spla.splu(sp.csc_matrix(A)).solve(rhs)
    except RuntimeError:
        return None
    if not np.all(np.isfinite(d)):
        return None
    return d


def solve_mcp(mcp: AffineMCP, z0=None, tol=1e-8, max_iter=500, regularization=1e-8,
              sigma=1e-4, beta=0.5, min_step=1e-12):
    """Semismooth Newton on the Fischer-Burmeister system.

    Newton systems are solved unregularized first and retried with
    ``regularization * I`` when the factorization fails. Raises
    ``ConvergenceError`` after ``max_iter`` iterations or if the line search
    cannot decrease the merit function.
    """
    t0 = time.perf_counter()
    n = mcp.size
    z = np.zeros(n) if z0 is None else np.array(z0, dtype=float)
    z = np.clip(z, mcp.lb, mcp.ub)
    M = sp.csr_matrix(mcp.M)
    F = M @ z + mcp.q
    phi, da, db = fb_residual(mcp, z, F, with_jacobian=True)
    merit = 0.5 * phi @ phi
    used_reg = False
    history = []
    for it in range(max_iter + 1):
        res = float(np.max(np.abs(phi))) if n else 0.0
        history.append(res)
        if res <= tol:
            return MCPResult(z, F, res, it, time.perf_counter() - t0, True, used_reg, history)
        if it == max_iter:
            break
        J = (sp.diags(da) + sp.diags(db) @ M).tocsc()
        d = _newton_direction(J, -phi, 0.0)
        if d is None:
            d = _newton_direction(J, -phi, regularization)
            used_reg = True
        grad = J.T @ phi
        slope = grad @ d if d is not None else np.inf
        if d is None or not slope < -1e-12 * np.linalg.norm(d) * np.linalg.norm(grad):
            d = -grad
            slope = -(grad @ grad)
        alpha = 1.0
        while True:
            z_new = z + alpha * d
            F_new = M @ z_new + mcp.q
            phi_new, da_new, db_new = fb_residual(mcp, z_new, F_new, with_jacobian=True)
            merit_new = 0.5 * phi_new @ phi_new
            if merit_new <= merit + sigma * alpha * slope or merit_new < 0.5 * tol ** 2:
                break
            alpha *= beta
            if alpha < min_step:
                raise ConvergenceError(
                    f"line search stalled at residual {res:.3e} after {it} iterations; "
                    "try a larger regularization", residual=res, iterations=it)
        z, F, phi, da, db, merit = z_new, F_new, phi_new, da_new, db_new, merit_new
    raise ConvergenceError(f"no convergence in {max_iter} iterations (residual {res:.3e})",
                           residual=res, iterations=max_iter)


def solve_lcp(M, q, **kw):
    """Convenience wrapper for the standard LCP ``z >= 0, Mz + q >= 0, z'(Mz + q) = 0``."""
    q = np.asarray(q, dtype=float)
    mcp = AffineMCP(sp.csr_matrix(np.atleast_2d(M)), q, np.zeros_like(q), np.full_like(q, np.inf))
    return solve_mcp(mcp, **kw)
