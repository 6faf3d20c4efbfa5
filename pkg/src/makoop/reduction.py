"""Slow-scale limit of a hierarchical model.

When the fast groups settle, ``y`` and ``w`` sit at the fixed point of their
sub-step maps for the current ``(psi_x, psi_u)``. Because the ``y`` map does
not read ``w``, the fixed point is triangular and closed form:

    psi_y* = K_yx psi_x + K_yu psi_u
    psi_w* = K_wx psi_x + K_wy psi_y* + K_wu psi_u

Substituting into the slow step gives ``psi_x+ = B_xx psi_x + B_xu psi_u +
sum_j G_ij psi_j`` with ``G_ij = (I - K_ii) K_ij``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import MakoopError, SingularityError
from .koopman import CombinedSystem, StructuredKoopman, _slices, hash_payload, model_hash, spectral_radius

FIXED_POINT_TOL = 1e-10


@dataclass
class ReducedModel:
    Bxx: list
    Bxu: list
    Byx: list
    Byu: list
    Bwx: list
    Bwu: list
    G: list  # G[i][j] = (I - K_ii) K_ij, zero on the diagonal
    source_hash: str = ""

    @property
    def n_agents(self) -> int:
        return len(self.Bxx)

    def combined(self) -> CombinedSystem:
        n = self.n_agents
        xs = [B.shape[0] for B in self.Bxx]
        us = [B.shape[1] for B in self.Bxu]
        ss, cs = _slices(xs), _slices(us)
        A = np.zeros((sum(xs), sum(xs)))
        Bu = np.zeros((sum(xs), sum(us)))
        for i in range(n):
            A[ss[i], ss[i]] = self.Bxx[i]
            for j in range(n):
                if j != i:
                    A[ss[i], ss[j]] = self.G[i][j]
            Bu[ss[i], cs[i]] = self.Bxu[i]
        return CombinedSystem(A, Bu, ss, cs, source="B")

    def spectral_radii(self) -> dict:
        return {"Bxx": [spectral_radius(B) for B in self.Bxx], "Bcomb": spectral_radius(self.combined().A)}

    def save(self, path):
        n = self.n_agents
        arrays = {}
        for i in range(n):
            for name in ("Bxx", "Bxu", "Byx", "Byu", "Bwx", "Bwu"):
                arrays[f"{name}_{i}"] = getattr(self, name)[i]
            for j in range(n):
                arrays[f"G_{i}_{j}"] = self.G[i][j]
        header = {"format": "makoop-reduced", "version": 1, "n_agents": n, "source_model_hash": self.source_hash}
        np.savez(path, header=np.array(json.dumps(header)), **arrays)

    @classmethod
    def load(cls, path) -> "ReducedModel":
        with np.load(path) as f:
            header = json.loads(str(f["header"]))
            if header.get("format") != "makoop-reduced":
                raise MakoopError(f"{path} is not a reduced model file")
            n = header["n_agents"]
            kw = {name: [f[f"{name}_{i}"] for i in range(n)]
                  for name in ("Bxx", "Bxu", "Byx", "Byu", "Bwx", "Bwu")}
            G = [[f[f"G_{i}_{j}"] for j in range(n)] for i in range(n)]
        return cls(G=G, source_hash=header["source_model_hash"], **kw)

    def hash(self) -> str:
        arrays = {f"{k}_{i}": getattr(self, k)[i] for k in ("Bxx", "Bxu", "Byx", "Byu", "Bwx", "Bwu")
                  for i in range(self.n_agents)}
        return hash_payload({"source": self.source_hash}, arrays)


def _check_invertible(K, what):
    M = np.eye(len(K)) - K
    smin = np.linalg.svd(M, compute_uv=False)[-1]
    if smin < FIXED_POINT_TOL:
        raise SingularityError(
            f"I - {what} is singular to tolerance (smallest singular value {smin:.2e}); "
            "the fast dynamics have no unique rest point",
            condition=np.linalg.cond(M))


def fast_fixed_point(model: StructuredKoopman, i, psi_x, psi_u):
    """Rest point ``(psi_y*, psi_w*)`` of agent ``i``'s fast maps with ``psi_x``, ``psi_u`` held."""
    _check_invertible(model.Kyy[i], f"K_yy[{i}]")
    _check_invertible(model.Kww[i], f"K_ww[{i}]")
    psi_y = model.Kyx[i] @ psi_x + model.Kyu[i] @ psi_u
    psi_w = model.Kwx[i] @ psi_x + model.Kwy[i] @ psi_y + model.Kwu[i] @ psi_u
    return psi_y, psi_w


def build_reduced(model: StructuredKoopman) -> ReducedModel:
    if not model.hierarchical:
        raise MakoopError("reduction needs a hierarchical model")
    n = model.n_agents
    out = {k: [] for k in ("Bxx", "Bxu", "Byx", "Byu", "Bwx", "Bwu")}
    G = [[None] * n for _ in range(n)]
    for i in range(n):
        _check_invertible(model.Kyy[i], f"K_yy[{i}]")
        _check_invertible(model.Kww[i], f"K_ww[{i}]")
        Kii = model.Kxx[i][i]
        I = np.eye(len(Kii))
        Byx, Byu = model.Kyx[i], model.Kyu[i]
        Bwx = model.Kwx[i] + model.Kwy[i] @ Byx
        Bwu = model.Kwu[i] + model.Kwy[i] @ Byu
        Bxx = Kii + (I - Kii) @ (model.Kxw[i] @ Bwx + model.Kxy[i] @ Byx)
        Bxu = (I - Kii) @ (model.Kxw[i] @ Bwu + model.Kxy[i] @ Byu)
        for k, v in zip(out, (Bxx, Bxu, Byx, Byu, Bwx, Bwu)):
            out[k].append(v)
        for j in range(n):
            G[i][j] = np.zeros((len(Kii), model.Kxx[j][j].shape[0])) if j == i else model.coupling(i, j)
    return ReducedModel(G=G, source_hash=model_hash(model), **out)


def reduced_step(reduced: ReducedModel, i, psi_x, psi_u_i):
    """One slow step of agent ``i`` under the reduced model (``psi_x`` is the list of all agents)."""
    nxt = reduced.Bxx[i] @ psi_x[i] + reduced.Bxu[i] @ psi_u_i
    for j in range(reduced.n_agents):
        if j != i:
            nxt = nxt + reduced.G[i][j] @ psi_x[j]
    return nxt


def consistency_check(model: StructuredKoopman, reduced: ReducedModel, m, psi_x, psi_u, perturbation=None):
    """Compare one full two-scale slow step against the reduced step.

    ``psi_x``/``psi_u`` are per-agent lists. Fast groups start at their rest
    points, optionally shifted by ``perturbation`` (per-agent ``(dy, dw)``).
    Returns a report dict with max deviations of the window averages and of
    the next slow state.
    """
    from .koopman import rollout_multiscale

    n = model.n_agents
    y0, w0, ystar, wstar = [], [], [], []
    for i in range(n):
        ys, ws = fast_fixed_point(model, i, psi_x[i], psi_u[i])
        ystar.append(ys)
        wstar.append(ws)
        dy, dw = (0.0, 0.0) if perturbation is None else perturbation[i]
        y0.append(ys + dy)
        w0.append(ws + dw)
    controls = np.concatenate([np.atleast_1d(u) for u in psi_u])[None, :]
    full = rollout_multiscale(model, psi_x, y0, w0, controls, m)
    red_next = [reduced_step(reduced, i, psi_x, psi_u[i]) for i in range(n)]
    dev_avg = max(max(np.max(np.abs(full["averages"][i][0] - ystar[i])),
                      np.max(np.abs(full["averages"][i][1] - wstar[i]))) for i in range(n))
    dev_slow = max(np.max(np.abs(full["x"][i][1] - red_next[i])) for i in range(n))
    return {"m": m, "max_average_deviation": float(dev_avg), "max_slow_deviation": float(dev_slow),
            "max_deviation": float(max(dev_avg, dev_slow))}
