"""Finite-horizon social optimum and Nash equilibrium on lifted linear dynamics.

Agent ``i`` controls ``u_i`` and owns the lifted state ``psi_i`` with

    psi_i,t+1 = A_ii psi_i,t + sum_{j != i} C_ij psi_j,t + D_i u_i,t

(``A``, ``C``, ``D`` read from a ``CombinedSystem``). Decision variables are
``psi_i,1..T`` and ``u_i,0..T-1``; ``lambda_i,t`` is the multiplier of the
constraint producing ``psi_i,t+1``. Both solution concepts are written as one
affine MCP

    [ H   E'  ] [p]   [ c]          p: primal (box constrained)
    [ -E  0   ] [l] + [-e]          l: multipliers (free)

For the optimum ``E'`` is the transpose of the full dynamics Jacobian. For the
equilibrium each agent only sees its own multipliers, so the blocks
``C_ji'`` (row ``psi_i``, column ``lambda_j``) are dropped. Costs are assumed
separable across agents, which makes ``H`` identical in both.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import ConvergenceError, DimensionError, MakoopError
from .mcp import AffineMCP, solve_mcp

log = logging.getLogger(__name__)

DEFAULT_HORIZON = 50


@dataclass
class ControlProblem:
    """Lifted quadratic finite-horizon problem.

    ``bounded[i]`` lists the components of ``psi_i`` that carry the state box
    (the raw-state entries of a state-inclusive lift).
    """

    system: object  # CombinedSystem or ReducedModel
    costs: list
    psi0: np.ndarray
    horizon: int = DEFAULT_HORIZON
    bounded: list | None = None
    x_bounds: tuple = (-1.0, 1.0)
    u_bounds: tuple = (-1.0, 1.0)

    def __post_init__(self):
        if self.horizon < 1:
            raise MakoopError("horizon must be >= 1")
        if hasattr(self.system, "combined"):  # ReducedModel
            self.system = self.system.combined()
        s = self.system
        self.psi0 = np.asarray(self.psi0, dtype=float)
        if self.psi0.shape != (s.A.shape[0],):
            raise DimensionError("initial lifted state", s.A.shape[0], self.psi0.shape[0])
        if len(self.costs) != s.n_agents:
            raise DimensionError("cost models", s.n_agents, len(self.costs))
        for i in range(s.n_agents):
            off = np.ones(s.B.shape[0], dtype=bool)
            off[s.state_slices[i]] = False
            if np.any(s.B[off][:, s.control_slices[i]]):
                raise MakoopError(f"agent {i}'s control enters another agent's dynamics")
            c = self.costs[i]
            if c.n_x != self.n_x[i] or c.n_u != self.n_u[i]:
                raise DimensionError(f"cost model {i}", (self.n_x[i], self.n_u[i]), (c.n_x, c.n_u))
        if self.bounded is None:
            self.bounded = [np.arange(0) for _ in range(s.n_agents)]

    @property
    def n_agents(self) -> int:
        return self.system.n_agents

    @property
    def n_x(self) -> list:
        return [s.stop - s.start for s in self.system.state_slices]

    @property
    def n_u(self) -> list:
        return [s.stop - s.start for s in self.system.control_slices]

    def A(self, i, j):
        return self.system.block(i, j)

    def D(self, i):
        s = self.system
        return s.B[s.state_slices[i], s.control_slices[i]]

    def psi0_agent(self, i):
        return self.psi0[self.system.state_slices[i]]


class _Layout:
    """Index bookkeeping for the stacked MCP vector."""

    def __init__(self, problem: ControlProblem):
        T = problem.horizon
        self.T = T
        self.nx, self.nu = problem.n_x, problem.n_u
        self.x_off, self.u_off, self.l_off = [], [], []
        k = 0
        for i in range(problem.n_agents):
            self.x_off.append(k)
            k += T * self.nx[i]
            self.u_off.append(k)
            k += T * self.nu[i]
        self.n_primal = k
        for i in range(problem.n_agents):
            self.l_off.append(k)
            k += T * self.nx[i]
        self.n = k

    def x(self, i, t):
        """Columns of ``psi_i,t`` for ``t = 1..T``."""
        a = self.x_off[i] + (t - 1) * self.nx[i]
        return slice(a, a + self.nx[i])

    def u(self, i, t):
        a = self.u_off[i] + t * self.nu[i]
        return slice(a, a + self.nu[i])

    def lam(self, i, t):
        a = self.l_off[i] + t * self.nx[i]
        return slice(a, a + self.nx[i])


class _Triplets:
    def __init__(self):
        self.r, self.c, self.v = [], [], []

    def add(self, rows: slice, cols: slice, block):
        block = np.asarray(block, dtype=float)
        rr, cc = np.nonzero(block)
        self.r.append(rr + rows.start)
        self.c.append(cc + cols.start)
        self.v.append(block[rr, cc])

    def matrix(self, shape):
        if not self.r:
            return sp.csr_matrix(shape)
        return sp.csr_matrix((np.concatenate(self.v), (np.concatenate(self.r), np.concatenate(self.c))), shape=shape)


def _assemble(problem: ControlProblem):
    """Return ``(layout, H, c, E_own, E_cross, e, lb, ub)`` in primal coordinates."""
    L = _Layout(problem)
    T, n = L.T, problem.n_agents
    H, Eo, Ec = _Triplets(), _Triplets(), _Triplets()
    c = np.zeros(L.n_primal)
    e = np.zeros(L.n - L.n_primal)
    lb = np.full(L.n, -np.inf)
    ub = np.full(L.n, np.inf)
    for i in range(n):
        Q = problem.costs[i]
        psi0 = problem.psi0_agent(i)
        for t in range(T):
            u = L.u(i, t)
            H.add(u, u, 2.0 * Q.Quu)
            c[u] += Q.cu
            lb[u], ub[u] = problem.u_bounds
            if t == 0:
                c[u] += 2.0 * Q.Qxu.T @ psi0
            else:
                x = L.x(i, t)
                H.add(x, x, 2.0 * Q.Qxx)
                H.add(x, u, 2.0 * Q.Qxu)
                H.add(u, x, 2.0 * Q.Qxu.T)
                c[x] += Q.cx
        for t in range(1, T + 1):
            idx = np.arange(L.x(i, t).start, L.x(i, t).stop)[problem.bounded[i]]
            lb[idx], ub[idx] = problem.x_bounds
        Aii, Di = problem.A(i, i), problem.D(i)
        for t in range(T):
            row = L.lam(i, t)
            rrow = slice(row.start - L.n_primal, row.stop - L.n_primal)
            Eo.add(rrow, L.x(i, t + 1), -np.eye(L.nx[i]))
            Eo.add(rrow, L.u(i, t), Di)
            if t == 0:
                e[rrow] += Aii @ psi0
                for j in range(n):
                    if j != i:
                        e[rrow] += problem.A(i, j) @ problem.psi0_agent(j)
            else:
                Eo.add(rrow, L.x(i, t), Aii)
                for j in range(n):
                    if j != i:
                        Ec.add(rrow, L.x(j, t), problem.A(i, j))
    shape_E = (L.n - L.n_primal, L.n_primal)
    return (L, H.matrix((L.n_primal, L.n_primal)), c, Eo.matrix(shape_E), Ec.matrix(shape_E), e, lb, ub)


def _mcp(problem, cross_in_stationarity, kind):
    L, H, c, Eo, Ec, e, lb, ub = _assemble(problem)
    E = Eo + Ec
    Et = (Eo + Ec).T if cross_in_stationarity else Eo.T
    M = sp.bmat([[H, Et], [-E, None]], format="csr")
    q = np.concatenate([c, -e])
    return AffineMCP(M, q, lb, ub, meta={"layout": L, "kind": kind, "problem": problem})


def build_optimum_kkt(problem: ControlProblem) -> AffineMCP:
    """KKT conditions of the summed objective as an affine MCP."""
    return _mcp(problem, True, "optimum")


def build_equilibrium_mcp(problem: ControlProblem) -> AffineMCP:
    """Stacked per-agent KKT conditions (Nash equilibrium) as an affine MCP."""
    return _mcp(problem, False, "equilibrium")


def coupling_blocks(problem: ControlProblem) -> sp.csr_matrix:
    """The cross-agent multiplier terms ``C_ji'`` placed at (row ``psi_i``, column ``lambda_j``).

    By construction ``M_opt - M_eq`` equals this matrix exactly.
    """
    L, _, _, _, Ec, _, _, _ = _assemble(problem)
    Z = sp.csr_matrix((L.n_primal, L.n_primal))
    return sp.bmat([[Z, Ec.T], [sp.csr_matrix((L.n - L.n_primal, L.n_primal)), None]], format="csr")


# -- solutions ----------------------------------------------------------------

@dataclass
class GameSolution:
    kind: str
    states: list
    controls: list
    objectives: list
    lam: list
    mu_x_min: list
    mu_x_max: list
    mu_u_min: list
    mu_u_max: list
    residuals: dict
    stats: dict
    z: np.ndarray = field(repr=False, default=None)

    @property
    def total_objective(self) -> float:
        return float(sum(self.objectives))

    @property
    def control_rms(self) -> list:
        return [float(np.sqrt(np.mean(u ** 2))) for u in self.controls]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "objectives": self.objectives,
            "total_objective": self.total_objective,
            "control_rms": self.control_rms,
            "residuals": self.residuals,
            "stats": self.stats,
        }

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    def to_csv(self, path, raw_indices=None):
        """One row per time step: controls and (raw) states of every agent."""
        T = len(self.controls[0])
        header, cols = ["t"], [np.arange(T + 1)]
        for i, (x, u) in enumerate(zip(self.states, self.controls)):
            idx = range(x.shape[1]) if raw_indices is None else raw_indices[i]
            for k in idx:
                header.append(f"agent{i + 1}_x{k + 1}")
                cols.append(x[:, k])
            for k in range(u.shape[1]):
                header.append(f"agent{i + 1}_u{k + 1}")
                cols.append(np.append(u[:, k], np.nan))
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(header)
            for row in np.column_stack(cols):
                w.writerow([repr(float(v)) for v in row])


def _extract(mcp: AffineMCP, z, F, result):
    problem: ControlProblem = mcp.meta["problem"]
    L: _Layout = mcp.meta["layout"]
    T, n = L.T, problem.n_agents
    has_l, has_u = np.isfinite(mcp.lb), np.isfinite(mcp.ub)
    mu_min = np.where(has_l, np.maximum(F, 0.0), 0.0)
    mu_max = np.where(has_u, np.maximum(-F, 0.0), 0.0)
    mu_min[L.n_primal:] = 0.0
    mu_max[L.n_primal:] = 0.0
    states, controls, lam, mxl, mxu, mul, muu, objs = [], [], [], [], [], [], [], []
    for i in range(n):
        xs = np.vstack([problem.psi0_agent(i)] + [z[L.x(i, t)] for t in range(1, T + 1)])
        us = np.vstack([z[L.u(i, t)] for t in range(T)])
        states.append(xs)
        controls.append(us)
        lam.append(np.vstack([z[L.lam(i, t)] for t in range(T)]))
        mxl.append(np.vstack([mu_min[L.x(i, t)] for t in range(1, T + 1)]))
        mxu.append(np.vstack([mu_max[L.x(i, t)] for t in range(1, T + 1)]))
        mul.append(np.vstack([mu_min[L.u(i, t)] for t in range(T)]))
        muu.append(np.vstack([mu_max[L.u(i, t)] for t in range(T)]))
        objs.append(problem.costs[i].total(xs, us))
    p = slice(0, L.n_primal)
    stationarity = np.max(np.abs(F[p] - mu_min[p] + mu_max[p]), initial=0.0)
    dyn = np.max(np.abs(F[L.n_primal:]), initial=0.0)
    viol = max(np.max(mcp.lb - z, initial=0.0), np.max(z - mcp.ub, initial=0.0))
    with np.errstate(invalid="ignore"):
        comp = max(np.max(np.where(has_l, mu_min * (z - mcp.lb), 0.0), initial=0.0),
                   np.max(np.where(has_u, mu_max * (mcp.ub - z), 0.0), initial=0.0))
    residuals = {
        "fb": float(result.residual),
        "stationarity": float(stationarity),
        "complementarity": float(comp),
        "feasibility": float(max(dyn, viol)),
    }
    stats = {"iterations": result.iterations, "wall_time": result.wall_time,
             "converged": result.converged, "regularized": result.regularized}
    return GameSolution(mcp.meta["kind"], states, controls, objs, lam, mxl, mxu, mul, muu, residuals, stats, z)


def initial_guess(problem: ControlProblem, mcp: AffineMCP):
    """Primal part from a ``u = 0`` rollout, multipliers zero."""
    L: _Layout = mcp.meta["layout"]
    z = np.zeros(L.n)
    psi = problem.psi0.copy()
    for t in range(1, L.T + 1):
        psi = problem.system.A @ psi
        for i in range(problem.n_agents):
            z[L.x(i, t)] = psi[problem.system.state_slices[i]]
    return np.clip(z, mcp.lb, mcp.ub)


def solve_game(mcp: AffineMCP, z0=None, **options) -> GameSolution:
    """Solve a game MCP; the default tolerance is tighter than the 1e-8 acceptance
    level so that derived residuals (stationarity, complementarity) stay below it."""
    options.setdefault("tol", 1e-9)
    problem = mcp.meta["problem"]
    if z0 is None:
        z0 = initial_guess(problem, mcp)
    res = solve_mcp(mcp, z0=z0, **options)
    return _extract(mcp, res.z, res.F, res)


def controls_warm_start(problem: ControlProblem, mcp: AffineMCP, U, margin=1e-7):
    """MCP point from a control sequence ``(T, m)``: states by rollout, multipliers
    by least squares on the stationarity rows of primal components off their bounds."""
    L: _Layout = mcp.meta["layout"]
    s = problem.system
    z = np.zeros(L.n)
    psi = problem.psi0.copy()
    for t in range(L.T):
        for i in range(problem.n_agents):
            z[L.u(i, t)] = U[t, s.control_slices[i]]
        psi = s.A @ psi + s.B @ U[t]
        for i in range(problem.n_agents):
            z[L.x(i, t + 1)] = psi[s.state_slices[i]]
    z = np.clip(z, mcp.lb, mcp.ub)
    n_p = L.n_primal
    zp = z[:n_p]
    free = ((zp - mcp.lb[:n_p]) > margin) & ((mcp.ub[:n_p] - zp) > margin)
    rhs = -(mcp.M[:n_p, :n_p] @ zp + mcp.q[:n_p])
    z[n_p:] = spla.lsqr(mcp.M[:n_p, n_p:][free], rhs[free], atol=1e-14, btol=1e-14, iter_lim=20 * L.n)[0]
    return z


def solve_optimum(problem: ControlProblem, crosscheck=True, **options) -> GameSolution:
    """Social optimum via its KKT MCP, optionally verified by a condensed QP solve.

    If Newton stalls from the default start, it is restarted from the condensed
    QP solution (``stats["restarted"]``); ill-conditioned lifted dynamics can
    otherwise trap the merit function far from the solution.
    """
    mcp = build_optimum_kkt(problem)
    cc = None
    try:
        sol = solve_game(mcp, **options)
        sol.stats["restarted"] = False
    except ConvergenceError as exc:
        t0 = time.perf_counter()
        cc = condensed_qp_solve(problem)
        cc["wall_time"] = time.perf_counter() - t0
        if cc["max_violation"] > 1e-6:
            raise
        log.info("optimum MCP stalled (%s); restarting from the condensed QP solution", exc)
        sol = solve_game(mcp, z0=controls_warm_start(problem, mcp, cc["U"]), **options)
        sol.stats["restarted"] = True
    if crosscheck:
        if cc is None:
            t0 = time.perf_counter()
            cc = condensed_qp_solve(problem)
            cc["wall_time"] = time.perf_counter() - t0
        rel = abs(cc["objective"] - sol.total_objective) / max(1.0, abs(sol.total_objective))
        sol.stats["crosscheck"] = {"objective": cc["objective"], "relative_difference": rel,
                                   "max_violation": cc["max_violation"], "iterations": cc["iterations"],
                                   "wall_time": cc["wall_time"]}
        if rel > 1e-6:
            log.warning("optimum cross-check disagrees: MCP %.10g vs condensed QP %.10g",
                        sol.total_objective, cc["objective"])
    return sol


def solve_equilibrium(problem: ControlProblem, warm_start: GameSolution | None = None, **options) -> GameSolution:
    """Nash equilibrium; ``warm_start`` (e.g. the optimum) seeds states, controls and multipliers."""
    mcp = build_equilibrium_mcp(problem)
    z0 = None if warm_start is None else warm_start.z
    return solve_game(mcp, z0=z0, **options)


def baseline_rollout(problem: ControlProblem):
    """Per-agent objectives under ``u = 0`` (bounds not enforced)."""
    s = problem.system
    T = problem.horizon
    psi = np.empty((T + 1, len(problem.psi0)))
    psi[0] = problem.psi0
    for t in range(T):
        psi[t + 1] = s.A @ psi[t]
    out = []
    for i in range(problem.n_agents):
        xs = psi[:, s.state_slices[i]]
        out.append(problem.costs[i].total(xs, np.zeros((T, problem.n_u[i]))))
    return out


# -- condensed QP cross-check ---------------------------------------------------

def condensed_qp(problem: ControlProblem):
    """Eliminate the dynamics: total objective ``U'HU/2 + g'U + const`` over stacked
    controls and the state box as ``G U <= h``."""
    s = problem.system
    A, B = s.A, s.B
    T = problem.horizon
    n, m = A.shape[0], B.shape[1]
    phi = np.empty((T + 1, n))
    P = np.zeros((T + 1, n, T * m))
    phi[0] = problem.psi0
    for t in range(T):
        phi[t + 1] = A @ phi[t]
        P[t + 1] = A @ P[t]
        P[t + 1][:, t * m:(t + 1) * m] += B
    Qxx = np.zeros((n, n))
    Qxu = np.zeros((n, m))
    Quu = np.zeros((m, m))
    cx = np.zeros(n)
    cu = np.zeros(m)
    c0 = 0.0
    for i, cst in enumerate(problem.costs):
        si, ci = s.state_slices[i], s.control_slices[i]
        Qxx[si, si] = cst.Qxx
        Qxu[si, ci] = cst.Qxu
        Quu[ci, ci] = cst.Quu
        cx[si] = cst.cx
        cu[ci] = cst.cu
        c0 += cst.c0
    H = np.zeros((T * m, T * m))
    g = np.zeros(T * m)
    const = 0.0
    for t in range(T):
        Pt = P[t]
        Et = np.zeros((m, T * m))
        Et[:, t * m:(t + 1) * m] = np.eye(m)
        H += 2.0 * (Pt.T @ Qxx @ Pt + Pt.T @ Qxu @ Et + Et.T @ Qxu.T @ Pt + Et.T @ Quu @ Et)
        g += 2.0 * (Pt.T @ Qxx @ phi[t] + Et.T @ Qxu.T @ phi[t]) + Pt.T @ cx + Et.T @ cu
        const += phi[t] @ Qxx @ phi[t] + cx @ phi[t] + c0
    rows = np.concatenate([np.asarray(b) + sl.start for b, sl in zip(problem.bounded, s.state_slices)]).astype(int)
    lo, hi = problem.x_bounds
    G = np.vstack([np.vstack([P[t][rows], -P[t][rows]]) for t in range(1, T + 1)]) if len(rows) else np.zeros((0, T * m))
    h = np.concatenate([np.concatenate([hi - phi[t][rows], phi[t][rows] - lo]) for t in range(1, T + 1)]) if len(rows) else np.zeros(0)
    keep = np.isfinite(h)
    return 0.5 * (H + H.T), g, const, G[keep], h[keep]


def projected_gradient_qp(H, g, G, h, lb, ub, tol=1e-11, max_outer=50, max_inner=200000):
    """Box-constrained QP with extra ``G U <= h`` rows.

    Augmented Lagrangian on ``G U <= h``; each subproblem is solved by
    accelerated projected gradient (FISTA with adaptive restart) on the box.
    """
    nvar = len(g)
    U = np.clip(np.zeros(nvar), lb, ub)
    y = np.zeros(len(h))
    rho = 10.0
    lam_H = np.linalg.eigvalsh(H)[-1]
    gnorm2 = np.linalg.norm(G, 2) ** 2 if G.size else 0.0
    iters = 0
    prev_viol = np.inf
    for _ in range(max_outer):
        Lip = lam_H + rho * gnorm2
        V, Uk, tk = U.copy(), U.copy(), 1.0
        for _ in range(max_inner):
            iters += 1
            act = np.maximum(0.0, y + rho * (G @ V - h)) if G.size else np.zeros(0)
            grad = H @ V + g + (G.T @ act if G.size else 0.0)
            Un = np.clip(V - grad / Lip, lb, ub)
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
            if (V - Un) @ (Un - Uk) > 0:  # restart
                t_next, V = 1.0, Uk.copy()
                Un = np.clip(V - grad / Lip, lb, ub)
            step = np.max(np.abs(Un - Uk))
            V = Un + ((tk - 1.0) / t_next) * (Un - Uk)
            Uk, tk = Un, t_next
            if step * Lip <= tol * max(1.0, np.max(np.abs(g))):
                break
        U = Uk
        if not G.size:
            break
        r = G @ U - h
        y = np.maximum(0.0, y + rho * r)
        viol = max(0.0, float(np.max(r)))
        if viol <= 1e-10:
            break
        if viol > 0.25 * prev_viol:
            rho *= 10.0
        prev_viol = viol
    viol = max(0.0, float(np.max(G @ U - h))) if G.size else 0.0
    return U, iters, viol


def condensed_qp_solve(problem: ControlProblem):
    H, g, const, G, h = condensed_qp(problem)
    T, m = problem.horizon, problem.system.B.shape[1]
    lb = np.full(T * m, problem.u_bounds[0])
    ub = np.full(T * m, problem.u_bounds[1])
    U, iters, viol = projected_gradient_qp(H, g, G, h, lb, ub)
    return {"U": U.reshape(T, m), "objective": float(0.5 * U @ H @ U + g @ U + const),
            "iterations": iters, "max_violation": viol}
