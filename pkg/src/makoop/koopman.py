"""Block-structured multi-agent Koopman models.

Each agent ``i`` has its own lifted state ``psi_i``. Its one-step update is

    psi_i+ = K_ii (psi_i - sum_j K_ij psi_j - K_xu,i u_i) + sum_j K_ij psi_j + K_xu,i u_i

which is bilinear in ``(K_ii, K_ij)``. Fitting uses the equivalent linear form

    psi_i+ = A_ii psi_i + sum_j C_ij psi_j + D_i u_i,   C_ij = (I - A_ii) K_ij,

solves ridge least squares per agent and factors the products afterwards.
The hierarchical model adds fast ``y`` and actuator ``w`` groups advanced on
the sub-step grid ``tau = dt / m``; the slow step sees their window averages.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .dictionary import DictionarySpec
from .errors import DimensionError, FitError, MakoopError, SingularityError

log = logging.getLogger(__name__)

RIDGE = 1e-8
RHO_TARGET = 0.999
SINGULAR_TOL = 1e-8
MIN_SAMPLES_PER_UNKNOWN = 10

HIER_BLOCKS = ("Kxy", "Kxw", "Kyy", "Kyx", "Kyu", "Kww", "Kwx", "Kwy", "Kwu")


@dataclass
class StructuredKoopman:
    """Per-agent Koopman blocks.

    ``Kxx[i][i]`` is agent ``i``'s own slow block and ``Kxx[i][j]`` the effect
    of agent ``j`` on agent ``i``. Lists indexed by agent hold the remaining
    blocks; the hierarchical blocks are ``None`` for flat models, and ``Kxu``
    is all-zero for hierarchical ones (controls enter only through ``y``, ``w``).
    """

    variant: str
    dictionaries: list
    Kxx: list
    Kxu: list
    rho_target: float = RHO_TARGET
    Kxy: list | None = None
    Kxw: list | None = None
    Kyy: list | None = None
    Kyx: list | None = None
    Kyu: list | None = None
    Kww: list | None = None
    Kwx: list | None = None
    Kwy: list | None = None
    Kwu: list | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_agents(self) -> int:
        return len(self.Kxx)

    @property
    def hierarchical(self) -> bool:
        return self.variant == "hier"

    def dim(self, group, i) -> int:
        return self.dictionaries[i][group].lifted_dim

    def coupling(self, i, j) -> np.ndarray:
        """Effective cross-agent input matrix ``(I - K_ii) K_ij``."""
        Kii = self.Kxx[i][i]
        return (np.eye(len(Kii)) - Kii) @ self.Kxx[i][j]

    def lift(self, group, i, raw):
        return self.dictionaries[i][group].lift(raw)

    def save(self, path):
        save_model(path, self)

    def hash(self) -> str:
        return model_hash(self)


@dataclass
class CombinedSystem:
    """Stacked ``psi+ = A psi + B u`` with per-agent index ranges."""

    A: np.ndarray
    B: np.ndarray
    state_slices: list
    control_slices: list
    source: str = "K"

    @property
    def n_agents(self) -> int:
        return len(self.state_slices)

    def block(self, i, j) -> np.ndarray:
        return self.A[self.state_slices[i], self.state_slices[j]]

    def step(self, psi, u):
        return self.A @ psi + self.B @ u


def _slices(sizes):
    out, lo = [], 0
    for n in sizes:
        out.append(slice(lo, lo + n))
        lo += n
    return out


def spectral_radius(A) -> float:
    A = np.asarray(A)
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def stability_project(A, rho_target=RHO_TARGET):
    """Scale ``A`` down uniformly so that its spectral radius is at most ``rho_target``."""
    A = np.asarray(A, dtype=float)
    rho = spectral_radius(A)
    if rho <= rho_target:
        return A
    return A * (rho_target / rho)


def _factor(A, products, what):
    """Recover ``K = (I - A)^{-1} P`` for each product ``P``."""
    M = np.eye(len(A)) - A
    smin = np.linalg.svd(M, compute_uv=False)[-1] if len(A) else 1.0
    if smin < SINGULAR_TOL:
        raise SingularityError(
            f"I - {what} is numerically singular (smallest singular value {smin:.2e}); "
            "reduce rho_target", condition=1.0 / max(smin, 1e-300))
    return [np.linalg.solve(M, P) for P in products]


def ridge_lstsq(X, Y, ridge=RIDGE, name="block"):
    """Solve ``min |X W - Y|^2 / N + ridge |W|^2``.

    The squared error is averaged over the ``N`` samples so the regularization
    strength does not depend on the dataset size. Returns ``(W, grad_max)``
    where ``grad_max`` is the max-norm of the gradient of that objective at
    ``W`` (a rounding-level number at a true minimizer).
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    N, p = X.shape
    if N < MIN_SAMPLES_PER_UNKNOWN * p:
        raise FitError(f"{name}: {N} samples for {p} unknowns per row; need at least {MIN_SAMPLES_PER_UNKNOWN * p}")
    # scale columns so the rank test is not fooled by units
    norms = np.linalg.norm(X, axis=0)
    if np.any(norms == 0):
        raise FitError(f"{name}: regression is rank deficient (all-zero regressor columns {np.flatnonzero(norms == 0).tolist()})")
    sv = np.linalg.svd(X / norms, compute_uv=False)
    if sv[-1] < 1e-13 * sv[0] * np.sqrt(N):
        raise FitError(f"{name}: regression is rank deficient (condition {sv[0] / sv[-1]:.2e})")
    G = X.T @ X / N + ridge * np.eye(p)
    W = np.linalg.solve(G, X.T @ Y / N)
    # one step of iterative refinement against the normal equations
    R = X.T @ Y / N - G @ W
    W = W + np.linalg.solve(G, R)
    grad = X.T @ (X @ W - Y) / N + ridge * W
    return W, float(np.max(np.abs(grad)))


def _split_cols(W, sizes):
    return [W[s].T for s in _slices(sizes)]


def _agent_slow_regression(Y, own, others, extras, ridge, name):
    X = np.hstack([own] + others + extras)
    W, g = ridge_lstsq(X, Y, ridge, name)
    sizes = [own.shape[1]] + [o.shape[1] for o in others] + [e.shape[1] for e in extras]
    return _split_cols(W, sizes), g, float(np.sqrt(np.mean((X @ W - Y) ** 2)))


def fit_flat(dataset, dictionaries, rho_target=RHO_TARGET, ridge=RIDGE, coupled=True):
    """Fit a flat structured model from one-step snapshot pairs.

    ``dictionaries[i]`` maps ``'x'`` and ``'u'`` to agent ``i``'s specs. With
    ``coupled=False`` the cross-agent regressors are dropped (``K_ij = 0``).
    """
    n_agents = len(dictionaries)
    xs = dataset.layout["x"]
    psi0 = [dictionaries[i]["x"].lift(dataset.states0[:, xs[i]]) for i in range(n_agents)]
    psi1 = [dictionaries[i]["x"].lift(dataset.states1[:, xs[i]]) for i in range(n_agents)]
    ups = [dictionaries[i]["u"].lift(dataset.controls[:, i:i + 1]) for i in range(n_agents)]
    Kxx = [[None] * n_agents for _ in range(n_agents)]
    Kxu = [None] * n_agents
    diag = {"grad_max": [], "rho_raw": [], "train_rms": [], "projected": []}
    for i in range(n_agents):
        others = [j for j in range(n_agents) if j != i] if coupled else []
        blocks, g, rms = _agent_slow_regression(
            psi1[i], psi0[i], [psi0[j] for j in others], [ups[i]], ridge, f"agent {i} slow block")
        A, Cs, D = blocks[0], blocks[1:-1], blocks[-1]
        rho = spectral_radius(A)
        A = stability_project(A, rho_target)
        factored = _factor(A, Cs + [D], f"K_xx[{i}][{i}]")
        Kxx[i][i] = A
        n = A.shape[0]
        for j in range(n_agents):
            if j != i:
                Kxx[i][j] = np.zeros((n, psi0[j].shape[1]))
        for j, K in zip(others, factored[:-1]):
            Kxx[i][j] = K
        Kxu[i] = factored[-1]
        diag["grad_max"].append(g)
        diag["rho_raw"].append(rho)
        diag["train_rms"].append(rms)
        diag["projected"].append(bool(rho > rho_target))
    return StructuredKoopman("flat", dictionaries, Kxx, Kxu, rho_target=rho_target, diagnostics=diag)


def fit_hier(dataset, dictionaries, rho_target=RHO_TARGET, ridge=RIDGE, coupled=True, zero_xw_wx=True):
    """Fit a hierarchical structured model.

    Fast blocks come from the sub-step pairs with ``x`` and ``u`` frozen at
    their slow-step values; the slow blocks regress the next slow state on the
    window-averaged fast observables. ``K_xw`` and ``K_wx`` are fixed at zero
    when ``zero_xw_wx`` (the benchmark's actuators never touch the slow state).
    """
    if dataset.fast is None:
        raise FitError("hierarchical fit needs fast sub-step records")
    from .reduction import build_reduced

    n_agents = len(dictionaries)
    lay = dataset.layout
    N, n_rec = dataset.fast.shape[:2]
    m = n_rec - 1
    blocks = {k: [None] * n_agents for k in HIER_BLOCKS}
    Kxx = [[None] * n_agents for _ in range(n_agents)]
    Kxu = [None] * n_agents
    diag = {"grad_max": {}, "rho_raw": {}, "train_rms": {}, "projected": {}}

    def note(name, g, rho, rms):
        diag["grad_max"][name] = g
        diag["rho_raw"][name] = rho
        diag["train_rms"][name] = rms
        diag["projected"][name] = bool(rho > rho_target)

    psi_x0 = [dictionaries[i]["x"].lift(dataset.states0[:, lay["x"][i]]) for i in range(n_agents)]
    for i in range(n_agents):
        d = dictionaries[i]
        psi_x = psi_x0[i]
        psi_u = d["u"].lift(dataset.controls[:, i:i + 1])
        fy = d["y"].lift(dataset.fast[:, :, lay["y"][i]])  # (N, m+1, ny)
        fw = d["w"].lift(dataset.fast[:, :, lay["w"][i]])
        ny, nw, nx = fy.shape[-1], fw.shape[-1], psi_x.shape[1]

        def rep(a):
            return np.repeat(a, m, axis=0)

        # y-dynamics: psi_y+ = K_yy psi_y + (I - K_yy)(K_yx psi_x + K_yu psi_u)
        Yy = fy[:, 1:].reshape(-1, ny)
        Xy = np.hstack([fy[:, :-1].reshape(-1, ny), rep(psi_x), rep(psi_u)])
        W, g = ridge_lstsq(Xy, Yy, ridge, f"agent {i} fast y block")
        Ayy, P, R = _split_cols(W, [ny, nx, psi_u.shape[1]])
        rho = spectral_radius(Ayy)
        note(f"Kyy{i}", g, rho, float(np.sqrt(np.mean((Xy @ W - Yy) ** 2))))
        Ayy = stability_project(Ayy, rho_target)
        Kyx, Kyu = _factor(Ayy, [P, R], f"K_yy[{i}]")
        del Xy, Yy

        # w-dynamics: psi_w+ = K_ww psi_w + (I - K_ww)(K_wx psi_x + K_wy psi_y + K_wu psi_u)
        Yw = fw[:, 1:].reshape(-1, nw)
        cols = [fw[:, :-1].reshape(-1, nw)]
        if not zero_xw_wx:
            cols.append(rep(psi_x))
        cols += [fy[:, :-1].reshape(-1, ny), rep(psi_u)]
        Xw = np.hstack(cols)
        W, g = ridge_lstsq(Xw, Yw, ridge, f"agent {i} fast w block")
        parts = _split_cols(W, [c.shape[1] for c in cols])
        Aww = parts[0]
        prods = parts[1:]
        rho = spectral_radius(Aww)
        note(f"Kww{i}", g, rho, float(np.sqrt(np.mean((Xw @ W - Yw) ** 2))))
        Aww = stability_project(Aww, rho_target)
        facs = _factor(Aww, prods, f"K_ww[{i}]")
        if zero_xw_wx:
            Kwx = np.zeros((nw, nx))
            Kwy, Kwu = facs
        else:
            Kwx, Kwy, Kwu = facs
        del Xw, Yw

        # slow x-dynamics with window-averaged fast observables
        avg_y = fy[:, :-1].mean(axis=1)
        avg_w = fw[:, :-1].mean(axis=1)
        others = [j for j in range(n_agents) if j != i] if coupled else []
        extras = [avg_y] if zero_xw_wx else [avg_y, avg_w]
        Yx = dictionaries[i]["x"].lift(dataset.states1[:, lay["x"][i]])
        parts, g, rms = _agent_slow_regression(
            Yx, psi_x, [psi_x0[j] for j in others], extras, ridge, f"agent {i} slow block")
        A = parts[0]
        rho = spectral_radius(A)
        note(f"Kxx{i}", g, rho, rms)
        A = stability_project(A, rho_target)
        Cs = parts[1:1 + len(others)]
        facs = _factor(A, Cs + parts[1 + len(others):], f"K_xx[{i}][{i}]")
        Kxx[i][i] = A
        for j in range(n_agents):
            if j != i:
                Kxx[i][j] = np.zeros((nx, psi_x0[j].shape[1]))
        for j, K in zip(others, facs):
            Kxx[i][j] = K
        Kxy = facs[len(others)]
        Kxw = np.zeros((nx, nw)) if zero_xw_wx else facs[len(others) + 1]
        Kxu[i] = np.zeros((nx, psi_u.shape[1]))
        for name, val in zip(HIER_BLOCKS, (Kxy, Kxw, Ayy, Kyx, Kyu, Aww, Kwx, Kwy, Kwu)):
            blocks[name][i] = val

    model = StructuredKoopman("hier", dictionaries, Kxx, Kxu, rho_target=rho_target, diagnostics=diag, **blocks)
    # the slow-scale limit is what the controllers use; report its stability
    try:
        red = build_reduced(model)
        diag["rho_Bxx"] = [spectral_radius(B) for B in red.Bxx]
        diag["rho_Bcomb"] = spectral_radius(red.combined().A)
        if max(diag["rho_Bxx"] + [diag["rho_Bcomb"]]) >= 1.0:
            log.warning("slow-scale limit is not stable: rho(B_xx)=%s rho(B_comb)=%.4f",
                        diag["rho_Bxx"], diag["rho_Bcomb"])
    except SingularityError as exc:
        log.warning("slow-scale limit undefined: %s", exc)
    return model


def assemble_combined(model: StructuredKoopman) -> CombinedSystem:
    """Stack the agents: diagonal blocks ``K_ii``, off-diagonal ``(I - K_ii) K_ij``."""
    n = model.n_agents
    xs = [model.Kxx[i][i].shape[0] for i in range(n)]
    us = [model.Kxu[i].shape[1] for i in range(n)]
    ss, cs = _slices(xs), _slices(us)
    A = np.zeros((sum(xs), sum(xs)))
    B = np.zeros((sum(xs), sum(us)))
    for i in range(n):
        Kii = model.Kxx[i][i]
        if Kii.shape != (xs[i], xs[i]):
            raise DimensionError(f"K_xx[{i}][{i}] rows", xs[i], Kii.shape[1])
        A[ss[i], ss[i]] = Kii
        for j in range(n):
            if j == i:
                continue
            if model.Kxx[i][j].shape != (xs[i], xs[j]):
                raise DimensionError(f"K_xx[{i}][{j}] columns", xs[j], model.Kxx[i][j].shape[1])
            A[ss[i], ss[j]] = model.coupling(i, j)
        if model.Kxu[i].shape[0] != xs[i]:
            raise DimensionError(f"K_xu[{i}] rows", xs[i], model.Kxu[i].shape[0])
        B[ss[i], cs[i]] = (np.eye(xs[i]) - Kii) @ model.Kxu[i]
    return CombinedSystem(A, B, ss, cs, source="K")


def step_agent(model: StructuredKoopman, i, psi_x, psi_u_i, avg_y=None, avg_w=None):
    """Advance agent ``i`` one slow step in the literal nested form.

    ``psi_x`` is the list of all agents' lifted slow states. Hierarchical
    models need the window averages of agent ``i``'s fast observables.
    """
    Kii = model.Kxx[i][i]
    inputs = sum((model.Kxx[i][j] @ psi_x[j] for j in range(model.n_agents) if j != i),
                 np.zeros(Kii.shape[0]))
    inputs = inputs + model.Kxu[i] @ psi_u_i
    if model.hierarchical:
        inputs = inputs + model.Kxw[i] @ avg_w + model.Kxy[i] @ avg_y
    return Kii @ (psi_x[i] - inputs) + inputs


def step_fast(model: StructuredKoopman, i, psi_x_i, psi_u_i, psi_y, psi_w):
    """One sub-step of agent ``i``'s fast ``y`` and ``w`` observables."""
    fy = model.Kyx[i] @ psi_x_i + model.Kyu[i] @ psi_u_i
    y_next = model.Kyy[i] @ (psi_y - fy) + fy
    fw = model.Kwx[i] @ psi_x_i + model.Kwy[i] @ psi_y + model.Kwu[i] @ psi_u_i
    w_next = model.Kww[i] @ (psi_w - fw) + fw
    return y_next, w_next


def rollout_multiscale(model: StructuredKoopman, psi_x0, psi_y0, psi_w0, controls, m):
    """Simulate the full two-scale lifted model.

    ``psi_x0``, ``psi_y0``, ``psi_w0`` are per-agent lists; ``controls`` is
    ``(steps, n_agents)`` (one scalar-per-agent column block each). Returns a
    dict with slow states per agent ``(steps + 1, n_x)`` and the last window's
    averages.
    """
    n = model.n_agents
    controls = np.asarray(controls, dtype=float)
    steps = controls.shape[0]
    xs = [np.empty((steps + 1, len(psi_x0[i]))) for i in range(n)]
    for i in range(n):
        xs[i][0] = psi_x0[i]
    ys, ws = list(psi_y0), list(psi_w0)
    avgs = None
    for t in range(steps):
        cur = [xs[i][t] for i in range(n)]
        avgs = []
        for i in range(n):
            u_i = controls[t, i:i + 1]
            sy, sw = np.zeros_like(ys[i]), np.zeros_like(ws[i])
            y, w = ys[i], ws[i]
            for _ in range(m):
                sy += y
                sw += w
                y, w = step_fast(model, i, cur[i], u_i, y, w)
            ys[i], ws[i] = y, w
            avgs.append((sy / m, sw / m))
        for i in range(n):
            xs[i][t + 1] = step_agent(model, i, cur, controls[t, i:i + 1], avgs[i][0], avgs[i][1])
    return {"x": xs, "y": ys, "w": ws, "averages": avgs}


def rollout_multiscale_batch(model: StructuredKoopman, psi_x0, psi_y0, psi_w0, controls, m):
    """Batched two-scale rollout: per-agent ``(B, n)`` initial blocks, ``controls``
    of shape ``(steps, B, n_agents)``. Returns per-agent slow states ``(steps + 1, B, n_x)``."""
    n = model.n_agents
    controls = np.asarray(controls, dtype=float)
    steps = controls.shape[0]
    xs = [np.empty((steps + 1,) + np.shape(psi_x0[i])) for i in range(n)]
    for i in range(n):
        xs[i][0] = psi_x0[i]
    ys, ws = [np.array(v, dtype=float) for v in psi_y0], [np.array(v, dtype=float) for v in psi_w0]
    for t in range(steps):
        nxt = []
        for i in range(n):
            x, u = xs[i][t], controls[t, :, i:i + 1]
            fy = x @ model.Kyx[i].T + u @ model.Kyu[i].T
            fw0 = x @ model.Kwx[i].T + u @ model.Kwu[i].T
            y, w = ys[i], ws[i]
            sy, sw = np.zeros_like(y), np.zeros_like(w)
            for _ in range(m):
                sy += y
                sw += w
                fw = fw0 + y @ model.Kwy[i].T
                y = (y - fy) @ model.Kyy[i].T + fy
                w = (w - fw) @ model.Kww[i].T + fw
            ys[i], ws[i] = y, w
            Kii = model.Kxx[i][i]
            inputs = u @ model.Kxu[i].T + (sw / m) @ model.Kxw[i].T + (sy / m) @ model.Kxy[i].T
            for j in range(n):
                if j != i:
                    inputs = inputs + xs[j][t] @ model.Kxx[i][j].T
            nxt.append((x - inputs) @ Kii.T + inputs)
        for i in range(n):
            xs[i][t + 1] = nxt[i]
    return xs


def predict(system, psi0, controls, steps=None):
    """Iterate lifted linear dynamics.

    ``system`` is a ``CombinedSystem`` (or a flat ``StructuredKoopman``, which is
    combined first). ``psi0`` is the stacked lifted state, or a batch ``(B, n)``;
    ``controls`` is ``(steps, n_u)`` or ``(steps, B, n_u)``. Returns
    ``(steps + 1, n)`` or ``(steps + 1, B, n)``.
    """
    if isinstance(system, StructuredKoopman):
        if system.hierarchical:
            raise MakoopError("use rollout_multiscale or the reduced model for hierarchical predictions")
        system = assemble_combined(system)
    psi0 = np.asarray(psi0, dtype=float)
    controls = np.asarray(controls, dtype=float)
    steps = controls.shape[0] if steps is None else steps
    out = np.empty((steps + 1,) + psi0.shape)
    out[0] = psi0
    for t in range(steps):
        out[t + 1] = out[t] @ system.A.T + controls[t] @ system.B.T
    return out


def read_states(system: CombinedSystem, dictionaries, lifted, group="x"):
    """Raw per-agent states from stacked lifted vectors (last axis)."""
    return [lifted[..., system.state_slices[i]][..., dictionaries[i][group].state_indices]
            for i in range(system.n_agents)]


# -- serialization ---------------------------------------------------------

def _model_arrays(model: StructuredKoopman):
    arrays = {}
    n = model.n_agents
    for i in range(n):
        for j in range(n):
            arrays[f"Kxx_{i}_{j}"] = model.Kxx[i][j]
        arrays[f"Kxu_{i}"] = model.Kxu[i]
        if model.hierarchical:
            for name in HIER_BLOCKS:
                arrays[f"{name}_{i}"] = getattr(model, name)[i]
    return arrays


def _model_header(model: StructuredKoopman):
    return {
        "format": "makoop-structured-koopman",
        "version": 1,
        "variant": model.variant,
        "n_agents": model.n_agents,
        "rho_target": model.rho_target,
        "dictionaries": [{g: s.to_dict() for g, s in d.items()} for d in model.dictionaries],
        "diagnostics": model.diagnostics,
    }


def hash_payload(header: dict, arrays: dict) -> str:
    h = hashlib.sha256(json.dumps(header, sort_keys=True).encode())
    for k in sorted(arrays):
        a = np.ascontiguousarray(arrays[k])
        h.update(k.encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def model_hash(model: StructuredKoopman) -> str:
    header = _model_header(model)
    header.pop("diagnostics")
    return hash_payload(header, _model_arrays(model))


def save_model(path, model: StructuredKoopman):
    """Write a single ``.npz``: a JSON ``header`` entry plus one array per block."""
    np.savez(path, header=np.array(json.dumps(_model_header(model))), **_model_arrays(model))


def load_model(path) -> StructuredKoopman:
    with np.load(path) as f:
        header = json.loads(str(f["header"]))
        if header.get("format") != "makoop-structured-koopman":
            raise MakoopError(f"{path} is not a structured Koopman model file")
        n = header["n_agents"]
        dicts = [{g: DictionarySpec.from_dict(s) for g, s in d.items()} for d in header["dictionaries"]]
        Kxx = [[f[f"Kxx_{i}_{j}"] for j in range(n)] for i in range(n)]
        Kxu = [f[f"Kxu_{i}"] for i in range(n)]
        extra = {}
        if header["variant"] == "hier":
            extra = {name: [f[f"{name}_{i}"] for i in range(n)] for name in HIER_BLOCKS}
    return StructuredKoopman(header["variant"], dicts, Kxx, Kxu, rho_target=header["rho_target"],
                             diagnostics=header.get("diagnostics", {}), **extra)


def default_dictionaries(variant, n_x=12, n_y=12, n_w=4, bandwidth=1.5, kind="gaussian-rbf", seed=0, n_agents=2):
    """Per-agent dictionaries with the benchmark's raw dimensions."""
    out = []
    for i in range(n_agents):
        base = seed + 1000 * (i + 1)
        d = {
            "x": DictionarySpec(2, n_x, kind, bandwidth, base + 1),
            "u": DictionarySpec(1, 0, kind, bandwidth, base + 2),
        }
        if variant == "hier":
            d["y"] = DictionarySpec(2, n_y, kind, bandwidth, base + 3)
            d["w"] = DictionarySpec(1, n_w, kind, bandwidth, base + 4)
        out.append(d)
    return out
