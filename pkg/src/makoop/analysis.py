"""Linear-systems metrics for lifted models.

All functions take plain matrices; ``metrics_report`` maps a fitted model onto
the per-agent / combined table.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InstabilityError, MakoopError
from .koopman import StructuredKoopman, assemble_combined, spectral_radius

log = logging.getLogger(__name__)

KRONECKER_MAX_DIM = 40
LYAP_RESIDUAL_TOL = 1e-10


def _require_stable(A, what="matrix"):
    rho = spectral_radius(A)
    if not rho < 1.0:
        raise InstabilityError(f"{what} is not Schur stable (spectral radius {rho:.6g})", spectral_radius=rho)
    return rho


def initial_growth(A) -> float:
    """``log`` of the largest singular value."""
    return float(np.log(np.linalg.norm(np.asarray(A, dtype=float), 2)))


def _resolvent_gain(A, s, theta):
    """``(|z| - 1) / sigma_min(z I - A)`` on a grid ``z = (1 + s) exp(i theta)``."""
    s = np.asarray(s, dtype=float)
    theta = np.asarray(theta, dtype=float)
    S, T = np.meshgrid(s, theta, indexing="ij")
    z = (1.0 + S) * np.exp(1j * T)
    n = A.shape[0]
    M = z[..., None, None] * np.eye(n) - A
    smin = np.linalg.svd(M, compute_uv=False)[..., -1]
    return S / smin


class KreissWarning(UserWarning):
    pass


def kreiss_bound(A, n_radii=64, n_angles=256, r_max=10.0, s_min=1e-6, refinements=2, full_output=False):
    """Lower bound on the peak transient growth, ``sup_{|z|>1} (|z|-1) |(zI - A)^{-1}|``.

    The supremum is searched on a log-spaced radial grid ``|z| - 1`` in
    ``[s_min, r_max - 1]`` times a uniform angular grid, then refined locally
    around the best point. As ``|z| -> inf`` the quantity tends to 1, so 1 is
    always a candidate.
    """
    A = np.asarray(A, dtype=float)
    _require_stable(A, "A")
    n = A.shape[0]
    if n == 0:
        return 1.0
    s = np.logspace(np.log10(s_min), np.log10(r_max - 1.0), n_radii)
    theta = np.linspace(0.0, 2 * np.pi, n_angles, endpoint=False)
    vals = _resolvent_gain(A, s, theta)
    k, l = np.unravel_index(np.argmax(vals), vals.shape)
    best = vals[k, l]
    best_s, best_t = s[k], theta[l]
    ls_step = np.log10(s[1]) - np.log10(s[0])
    t_step = theta[1] - theta[0]
    for _ in range(refinements):
        ls = np.log10(best_s) + np.linspace(-ls_step, ls_step, 21)
        ls = ls[(ls >= np.log10(s_min)) & (ls <= np.log10(r_max - 1.0))]
        tt = best_t + np.linspace(-t_step, t_step, 21)
        v = _resolvent_gain(A, 10 ** ls, tt)
        a, b = np.unravel_index(np.argmax(v), v.shape)
        if v[a, b] > best:
            best, best_s, best_t = v[a, b], 10 ** ls[a], tt[b]
        ls_step /= 10.0
        t_step /= 10.0
    on_edge = np.isclose(best_s, s_min, rtol=1e-9) or np.isclose(best_s, r_max - 1.0, rtol=1e-9)
    edge_warning = bool(on_edge and best > 1.0)
    if edge_warning:
        warnings.warn("Kreiss maximizer sits on the radial grid boundary; widen the grid", KreissWarning)
    value = float(max(best, 1.0))
    if full_output:
        return {"value": value, "z": complex((1 + best_s) * np.exp(1j * best_t)), "boundary_warning": edge_warning}
    return value


def max_power_norm(A, k_max=500, include_identity=True):
    """``max_k |A^k|_2`` over ``k = 1..k_max`` (and ``k = 0`` when ``include_identity``)."""
    A = np.asarray(A, dtype=float)
    P = np.eye(A.shape[0])
    best = 1.0 if include_identity else 0.0
    for _ in range(k_max):
        P = P @ A
        best = max(best, np.linalg.norm(P, 2))
    return float(best)


def power_norms(A, k_max=500):
    """``|A^k|_2`` for ``k = 0..k_max``."""
    A = np.asarray(A, dtype=float)
    P = np.eye(A.shape[0])
    out = [1.0 if A.size else 0.0]
    for _ in range(k_max):
        P = P @ A
        out.append(np.linalg.norm(P, 2))
    return np.array(out)


def lyapunov_residual(F, X, RHS) -> float:
    """Relative residual of ``F X F^T - X + RHS = 0``."""
    R = F @ X @ F.T - X + RHS
    scale = max(np.linalg.norm(X), np.linalg.norm(RHS))
    return float(np.linalg.norm(R) / scale) if scale > 0 else float(np.linalg.norm(R))


def solve_discrete_lyapunov(F, RHS, method="auto"):
    """Solve ``F X F^T - X = -RHS`` for symmetric ``X`` with stable ``F``.

    Small problems use the Kronecker form ``(I - F kron F) vec X = vec RHS``;
    larger ones the doubling iteration ``X += A X A^T, A <- A^2``.
    """
    F = np.asarray(F, dtype=float)
    RHS = np.asarray(RHS, dtype=float)
    n = F.shape[0]
    if RHS.shape != (n, n):
        raise DimensionError("RHS shape", (n, n), RHS.shape)
    _require_stable(F, "F")
    if method == "auto":
        method = "kronecker" if n <= KRONECKER_MAX_DIM else "doubling"
    if method == "kronecker":
        X = np.linalg.solve(np.eye(n * n) - np.kron(F, F), RHS.ravel()).reshape(n, n)
    elif method == "doubling":
        X = RHS.copy()
        Ak = F.copy()
        for _ in range(200):
            step = Ak @ X @ Ak.T
            X = X + step
            Ak = Ak @ Ak
            if np.linalg.norm(step) <= 1e-17 * max(np.linalg.norm(X), 1e-300):
                break
    else:
        raise ValueError(f"unknown method {method!r}")
    return 0.5 * (X + X.T)


def gramian(F, E):
    """Gramian of ``x+ = F x + E v``; returns ``(X, |X|_2)``."""
    E = np.asarray(E, dtype=float)
    X = solve_discrete_lyapunov(F, E @ E.T)
    return X, float(np.linalg.norm(X, 2))


def gramian_cross(F, coupling):
    """Cross-agent gramian with ``F = K_ii`` (or ``B_xx,i``) and input ``(I - K_ii) K_ij``."""
    return gramian(F, coupling)


def gramian_control(F, B, columns=None):
    """Control gramian restricted to the given control ``columns`` (others zeroed)."""
    B = np.asarray(B, dtype=float)
    if columns is not None:
        mask = np.zeros(B.shape[1], dtype=bool)
        mask[columns] = True
        B = np.where(mask[None, :], B, 0.0)
    return gramian(F, B)


def perturbation_gain(A, block, k_max=200, k_cap=5000, decay=1e-6):
    """``max_k sigma_max(A^k[:, block])^2``: worst squared growth from a unit perturbation of one block.

    ``k_max`` is doubled (up to ``k_cap``) until the per-``k`` value has fallen
    below ``decay`` times the running maximum.
    """
    A = np.asarray(A, dtype=float)
    _require_stable(A, "A")
    M = A[:, block]
    if not np.any(M):
        return 0.0
    best, k, last = 0.0, 0, np.inf
    while True:
        while k < k_max:
            k += 1
            if k > 1:
                M = A @ M
            last = np.linalg.norm(M, 2) ** 2
            best = max(best, last)
        if last < decay * best or k_max >= k_cap:
            break
        k_max = min(2 * k_max, k_cap)
    return float(best)


# -- report -----------------------------------------------------------------

# Published reference magnitudes obtained with learned observables. They are printed
# next to computed values for qualitative comparison and never asserted.
REFERENCE_FLAT = {
    "columns": ["Agent 1", "Agent 2", "Combined"],
    "Xc_i": [0.018, 0.014, 0.046],
    "Xc_ij": [1.97, 2.32, None],
    "P_max": [54.67, 52.45, None],
    "log_norm": [0.429, 0.194, 0.436],
    "T_bound": [3.604, 3.581, 4.13],
}
REFERENCE_HIER = {
    "columns": ["Kxx_11", "Kxx_22", "K_comb", "Bxx_1", "Bxx_2", "B_comb"],
    "Xc_i": [None, None, None, 0.0117, 0.0093, 0.0295],
    "Xc_ij": [4.529, 5.817, None, 4.043, 6.403, None],
    "P_max": [97.39, 103.85, None, 103.14, 102.12, None],
    "log_norm": [0.681, 0.402, 0.698, 0.692, 0.415, 0.709],
    "T_bound": [5.311, 4.421, 5.880, 5.519, 4.334, 6.108],
}
ROW_LABELS = {
    "Xc_i": "||X^c_i||",
    "Xc_ij": "||X^c_ij||",
    "P_max": "P_max,i",
    "log_norm": "log||A||_2",
    "T_bound": "T_bound",
}


@dataclass
class MetricsReport:
    columns: list
    rows: dict
    errors: dict = field(default_factory=dict)
    reference: dict | None = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"columns": self.columns, "rows": self.rows, "errors": self.errors,
                "reference": self.reference, "metadata": self.metadata}

    def to_json(self, path=None, **kw):
        text = json.dumps(self.to_dict(), indent=2, **kw)
        if path is not None:
            with open(path, "w") as f:
                f.write(text + "\n")
        return text

    def to_text(self, with_reference=True) -> str:
        width = max(12, *(len(c) + 2 for c in self.columns))
        lines = ["Metric".ljust(14) + "".join(c.rjust(width) for c in self.columns)]
        lines.append("-" * len(lines[0]))
        for key, label in ROW_LABELS.items():
            vals = self.rows.get(key)
            if vals is None:
                continue
            lines.append(label.ljust(14) + "".join(_fmt(v).rjust(width) for v in vals))
            if with_reference and self.reference and self.reference.get(key):
                ref = self.reference[key]
                lines.append("  (reference)".ljust(14) + "".join(_fmt(v).rjust(width) for v in ref))
        if self.errors:
            lines.append("")
            for k, v in sorted(self.errors.items()):
                lines.append(f"note: {k}: {v}")
        return "\n".join(lines)


def _fmt(v):
    if v is None:
        return "--"
    if abs(v) >= 100:
        return f"{v:.2f}"
    return f"{v:.4g}"


def _safe(errors, key, fn, *args):
    try:
        return fn(*args)
    except (InstabilityError, np.linalg.LinAlgError) as exc:
        errors[key] = str(exc)
        log.warning("%s: %s", key, exc)
        return None


def _column_metrics(errors, name, F, cross_inputs, control_input, comb_A, block):
    out = {}
    out["Xc_i"] = None if control_input is None or not np.any(control_input) else _safe(
        errors, f"{name}.Xc_i", lambda: gramian(F, control_input)[1])
    out["Xc_ij"] = None if not cross_inputs else _safe(
        errors, f"{name}.Xc_ij", lambda: max(gramian(F, E)[1] for E in cross_inputs))
    out["P_max"] = None if block is None else _safe(errors, f"{name}.P_max", perturbation_gain, comb_A, block)
    out["log_norm"] = initial_growth(F)
    out["T_bound"] = _safe(errors, f"{name}.T_bound", kreiss_bound, F)
    return out


def metrics_report(model: StructuredKoopman, reduced=None) -> MetricsReport:
    """Per-agent and combined metrics in the layout of the published tables.

    Flat models give columns ``Agent i`` and ``Combined``; hierarchical models
    give the slow blocks ``Kxx_ii``, ``K_comb`` and, from the slow-scale limit,
    ``Bxx_i`` and ``B_comb``. Entries that do not apply are ``None``.
    """
    n = model.n_agents
    errors = {}
    cols, data = [], []
    K = assemble_combined(model)

    def family(A_blocks, comb, cross, ctrl, labels, comb_label):
        for i in range(n):
            cols.append(labels[i])
            data.append(_column_metrics(errors, labels[i], A_blocks[i], cross[i], ctrl[i], comb.A, comb.state_slices[i]))
        cols.append(comb_label)
        all_ctrl = comb.B if np.any(comb.B) else None
        data.append(_column_metrics(errors, comb_label, comb.A, [], all_ctrl, None, None))

    Kii = [model.Kxx[i][i] for i in range(n)]
    cross = [[model.coupling(i, j) for j in range(n) if j != i] for i in range(n)]
    if not model.hierarchical:
        ctrl = [K.B[K.state_slices[i], K.control_slices[i]] for i in range(n)]
        family(Kii, K, cross, ctrl, [f"Agent {i + 1}" for i in range(n)], "Combined")
        ref = REFERENCE_FLAT if n == 2 else None
    else:
        from .reduction import build_reduced

        family(Kii, K, cross, [None] * n, [f"Kxx_{i + 1}{i + 1}" for i in range(n)], "K_comb")
        red = reduced if reduced is not None else build_reduced(model)
        Bc = red.combined()
        family(red.Bxx, Bc, cross, red.Bxu, [f"Bxx_{i + 1}" for i in range(n)], "B_comb")
        ref = REFERENCE_HIER if n == 2 else None
    rows = {key: [d[key] for d in data] for key in ROW_LABELS}
    meta = {"variant": model.variant, "kreiss_grid": "64 log radii x 256 angles, 2 refinements",
            "perturbation_k_max": 200}
    return MetricsReport(cols, rows, errors, ref, meta)
