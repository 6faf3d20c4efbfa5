"""Quadratic stage costs in lifted coordinates.

Per agent, the stage cost is

    l(psi, u) = psi' Qxx psi + 2 psi' Qxu u + u' Quu u + cx' psi + cu' u + c0

and an agent's objective is ``sum_{t=0}^{T-1} l(psi_t, u_t)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class CostModel:
    Qxx: np.ndarray
    Qxu: np.ndarray
    Quu: np.ndarray
    cx: np.ndarray
    cu: np.ndarray
    c0: float = 0.0

    @property
    def n_x(self) -> int:
        return self.Qxx.shape[0]

    @property
    def n_u(self) -> int:
        return self.Quu.shape[0]

    def hessian(self) -> np.ndarray:
        """Full symmetric ``[[Qxx, Qxu], [Qxu', Quu]]``."""
        return np.block([[self.Qxx, self.Qxu], [self.Qxu.T, self.Quu]])

    def stage(self, psi, u):
        """Stage cost for one step or a batch along the leading axis."""
        psi = np.asarray(psi, dtype=float)
        u = np.asarray(u, dtype=float)
        quad = (np.einsum("...i,ij,...j->...", psi, self.Qxx, psi)
                + 2.0 * np.einsum("...i,ij,...j->...", psi, self.Qxu, u)
                + np.einsum("...i,ij,...j->...", u, self.Quu, u))
        return quad + psi @ self.cx + u @ self.cu + self.c0

    def total(self, states, controls):
        """Objective over a horizon: ``states`` has ``T + 1`` rows, ``controls`` ``T``."""
        T = len(controls)
        return float(np.sum(self.stage(states[:T], controls)))


def _selector(rows, n):
    S = np.zeros((len(rows), n))
    S[np.arange(len(rows)), rows] = 1.0
    return S


def _from_quadratic(H, n_x):
    H = 0.5 * (H + H.T)
    n_u = H.shape[0] - n_x
    return CostModel(H[:n_x, :n_x], H[:n_x, n_x:], H[n_x:, n_x:], np.zeros(n_x), np.zeros(n_u), 0.0)


def build_cost(variant, dictionaries, reduced=None, agent=None):
    """Exact lifted form of the benchmark running costs.

    Flat: ``x1^2 + x2^2 + u^2`` on the raw components of ``psi_x``.
    Hierarchical: ``x1^2 + x2^2 + y1^2 + y2^2 + w^2`` with the fast groups at
    their slow-scale rest points ``psi_y* = B_yx psi_x + B_yu u`` and
    ``psi_w* = B_wx psi_x + B_wu u`` (needs ``reduced``).

    Returns a list with one ``CostModel`` per agent (or one model for ``agent``).
    """
    agents = range(len(dictionaries)) if agent is None else [agent]
    out = []
    for i in agents:
        d = dictionaries[i]
        nx, nu = d["x"].lifted_dim, d["u"].lifted_dim
        Sx = np.hstack([_selector(d["x"].state_indices, nx), np.zeros((d["x"].raw_dim, nu))])
        if variant == "flat":
            Su = np.hstack([np.zeros((d["u"].raw_dim, nx)), _selector(d["u"].state_indices, nu)])
            H = Sx.T @ Sx + Su.T @ Su
        elif variant == "hier":
            if reduced is None:
                raise ValueError("hierarchical costs need the reduced model")
            Ly = _selector(d["y"].state_indices, d["y"].lifted_dim) @ np.hstack([reduced.Byx[i], reduced.Byu[i]])
            Lw = _selector(d["w"].state_indices, d["w"].lifted_dim) @ np.hstack([reduced.Bwx[i], reduced.Bwu[i]])
            H = Sx.T @ Sx + Ly.T @ Ly + Lw.T @ Lw
        else:
            raise ValueError(f"unknown variant {variant!r}")
        out.append(_from_quadratic(H, nx))
    return out if agent is None else out[0]


def raw_running_cost(variant, x, u=None, y=None, w=None):
    """The benchmark's running cost on raw variables (per agent)."""
    x = np.asarray(x, dtype=float)
    cost = np.sum(x ** 2, axis=-1)
    if variant == "flat":
        return cost + np.sum(np.asarray(u, dtype=float) ** 2, axis=-1)
    return cost + np.sum(np.asarray(y) ** 2, axis=-1) + np.sum(np.asarray(w) ** 2, axis=-1)
