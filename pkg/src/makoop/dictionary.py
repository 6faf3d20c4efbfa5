"""State-inclusive observable dictionaries.

A lifted vector is ``[raw; phi(raw)]``: the raw variables come first, so the
original state can always be read back from the first ``raw_dim`` entries.
Controls use the identity lift (``n_nonlinear = 0``).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError

FEATURE_KINDS = ("gaussian-rbf", "polynomial")

# centers are drawn from this box; kept inside [-1.5, 1.5]
CENTER_HALF_WIDTH = 1.2


@dataclass(frozen=True)
class DictionarySpec:
    """Fixed nonlinear feature map for one observable group.

    Gaussian features are ``exp(-|x - c|^2 / (2 * bandwidth^2))``. Polynomial
    features are the first ``n_nonlinear`` monomials of total degree >= 2 in
    graded order; their ``centers`` are unused.
    """

    raw_dim: int
    n_nonlinear: int = 0
    feature_kind: str = "gaussian-rbf"
    bandwidth: float = 1.0
    seed: int = 0
    centers: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.raw_dim < 1:
            raise ValueError("raw_dim must be positive")
        if self.n_nonlinear < 0:
            raise ValueError("n_nonlinear must be nonnegative")
        if self.feature_kind not in FEATURE_KINDS:
            raise ValueError(f"feature_kind must be one of {FEATURE_KINDS}")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if self.centers is None:
            rng = np.random.default_rng(self.seed)
            centers = rng.uniform(-CENTER_HALF_WIDTH, CENTER_HALF_WIDTH,
                                  size=(self.n_nonlinear, self.raw_dim))
        else:
            centers = np.array(self.centers, dtype=float).reshape(self.n_nonlinear, self.raw_dim)
        centers.setflags(write=False)
        object.__setattr__(self, "centers", centers)

    @property
    def lifted_dim(self) -> int:
        return self.raw_dim + self.n_nonlinear

    @property
    def state_indices(self) -> np.ndarray:
        """Positions of the raw variables inside a lifted vector."""
        return np.arange(self.raw_dim)

    @property
    def exponents(self) -> np.ndarray:
        return _monomial_exponents(self.raw_dim, self.n_nonlinear)

    def features(self, raw: np.ndarray) -> np.ndarray:
        """Nonlinear part of the lift for a batch ``(..., raw_dim)``."""
        raw = np.asarray(raw, dtype=float)
        if self.n_nonlinear == 0:
            return np.zeros(raw.shape[:-1] + (0,))
        if self.feature_kind == "gaussian-rbf":
            d2 = ((raw[..., None, :] - self.centers) ** 2).sum(axis=-1)
            return np.exp(-d2 / (2.0 * self.bandwidth ** 2))
        return np.prod(raw[..., None, :] ** self.exponents, axis=-1)

    def lift(self, raw: np.ndarray) -> np.ndarray:
        """Lift one vector or a batch of row vectors."""
        raw = np.asarray(raw, dtype=float)
        if raw.ndim == 0 or raw.shape[-1] != self.raw_dim:
            actual = raw.shape[-1] if raw.ndim else 1
            raise DimensionError("lift input", self.raw_dim, actual)
        return np.concatenate([raw, self.features(raw)], axis=-1)

    def to_dict(self) -> dict:
        return {
            "raw_dim": self.raw_dim,
            "n_nonlinear": self.n_nonlinear,
            "feature_kind": self.feature_kind,
            "bandwidth": self.bandwidth,
            "seed": self.seed,
            "centers": self.centers.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DictionarySpec":
        d = dict(d)
        centers = d.pop("centers", None)
        if centers is not None:
            centers = np.array(centers, dtype=float).reshape(d["n_nonlinear"], d["raw_dim"])
        return cls(centers=centers, **d)


def lift(spec: DictionarySpec, raw) -> np.ndarray:
    return spec.lift(raw)


def jacobian_state_block(spec: DictionarySpec) -> np.ndarray:
    """Index selector for the raw-state components of a lifted vector."""
    return spec.state_indices


def identity_spec(raw_dim: int) -> DictionarySpec:
    return DictionarySpec(raw_dim=raw_dim, n_nonlinear=0)


def _monomial_exponents(raw_dim, count):
    out = []
    degree = 2
    while len(out) < count:
        for combo in itertools.combinations_with_replacement(range(raw_dim), degree):
            e = np.zeros(raw_dim, dtype=int)
            for k in combo:
                e[k] += 1
            out.append(e)
            if len(out) == count:
                break
        degree += 1
    return np.array(out, dtype=int).reshape(count, raw_dim)
