"""Two-agent oscillator benchmark, a fixed-step RK4 integrator and datasets.

State layouts (row vectors, batches along axis 0):

* flat: ``[x11, x12, x21, x22]``, controls ``[u1, u2]``
* hier: ``[x11, x12, y11, y12, w1, x21, x22, y21, y22, w2]``, controls ``[u1, u2]``

In the hierarchical variant the fast states ``y`` and actuator ``w`` evolve
``m`` times faster than the slow states (``rate = scale.m``).
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from functools import partial

import numpy as np

from .errors import ConfigError, DimensionError, DivergenceError, MakoopError, NonFiniteError

log = logging.getLogger(__name__)

N_AGENTS = 2
DIVERGENCE_NORM = 1e6
MAX_DISCARD_FRACTION = 0.10
FLAT_SUBSTEPS = 10  # RK4 steps per slow interval in the flat variant
HIER_SUBSTEPS_PER_TAU = 10

# per-agent raw index slices for each variant
FLAT_LAYOUT = {"x": [slice(0, 2), slice(2, 4)]}
HIER_LAYOUT = {
    "x": [slice(0, 2), slice(5, 7)],
    "y": [slice(2, 4), slice(7, 9)],
    "w": [slice(4, 5), slice(9, 10)],
}
STATE_DIM = {"flat": 4, "hier": 10}
CONTROL_DIM = 2


@dataclass(frozen=True)
class ScaleConfig:
    dt_slow: float = 0.1
    m: int = 100

    def __post_init__(self):
        if self.m < 2:
            raise ConfigError("time-scale ratio m must be >= 2")
        if not self.dt_slow > 0:
            raise ConfigError("dt_slow must be positive")

    @property
    def tau(self) -> float:
        return self.dt_slow / self.m


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    variant: str

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        if len(self.states) != len(self.times):
            raise ValueError("states and times have different lengths")

    def to_csv(self, path):
        n_x = self.states.shape[1]
        names = ["t"] + [f"s{k}" for k in range(n_x)] + [f"u{k}" for k in range(self.controls.shape[1])]
        # controls are defined per interval; the last row repeats nothing
        ctrl = np.vstack([self.controls, np.full((1, self.controls.shape[1]), np.nan)])
        ctrl = ctrl[: len(self.times)]
        data = np.column_stack([self.times, self.states, ctrl])
        np.savetxt(path, data, delimiter=",", header=",".join(names), comments="", fmt="%.17g")


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteError("non-finite input to benchmark dynamics")


def _flat_field(s, u):
    x11, x12, x21, x22 = s[..., 0], s[..., 1], s[..., 2], s[..., 3]
    u1, u2 = u[..., 0], u[..., 1]
    out = np.empty_like(s)
    out[..., 0] = x12
    out[..., 1] = -(1.0 - x11 ** 2) * x12 - x11 + 0.25 * np.sinh(x21) + 0.5 * u1
    out[..., 2] = x22
    out[..., 3] = -np.sinh(x22) - np.sin(x21) + 0.5 * np.tanh(x12) + 0.5 * u2
    return out


def _hier_field(s, u, rate):
    x11, x12, y11, y12, w1 = (s[..., k] for k in range(5))
    x21, x22, y21, y22, w2 = (s[..., k] for k in range(5, 10))
    u1, u2 = u[..., 0], u[..., 1]
    out = np.empty_like(s)
    out[..., 0] = x12
    out[..., 1] = -(1.0 - x11 ** 2) * x12 - x11 + 0.25 * np.sinh(x21) + 0.5 * y11
    out[..., 2] = rate * y12
    out[..., 3] = rate * (-2.0 * y12 - y11 - y11 ** 3 - 2.0 * w1 + 0.5 * x12 ** 2)
    out[..., 4] = rate * (y12 + (y11 - u1))
    out[..., 5] = x22
    out[..., 6] = -np.sinh(x22) - np.sin(x21) + 0.5 * np.tanh(x12) + 0.5 * y21
    out[..., 7] = rate * y22
    out[..., 8] = rate * (-2.0 * y22 - y21 - y21 ** 3 - 2.0 * w2 + 0.5 * x22 ** 2)
    out[..., 9] = rate * (y22 + (y21 - u2))
    return out


def rhs_flat(state, u):
    """Time derivative of the flat (single time scale) benchmark."""
    state = np.asarray(state, dtype=float)
    u = np.asarray(u, dtype=float)
    if state.shape[-1] != 4:
        raise DimensionError("flat state", 4, state.shape[-1])
    if u.shape[-1] != 2:
        raise DimensionError("control", 2, u.shape[-1])
    _check_finite(state, u)
    return _flat_field(state, u)


def rhs_hier(state, u, scale: ScaleConfig = ScaleConfig()):
    """Time derivative of the hierarchical benchmark; fast rows carry the factor ``scale.m``."""
    state = np.asarray(state, dtype=float)
    u = np.asarray(u, dtype=float)
    if state.shape[-1] != 10:
        raise DimensionError("hierarchical state", 10, state.shape[-1])
    if u.shape[-1] != 2:
        raise DimensionError("control", 2, u.shape[-1])
    _check_finite(state, u)
    return _hier_field(state, u, float(scale.m))


def field_for(variant, scale: ScaleConfig = ScaleConfig()):
    """Unchecked vector field ``f(state, u)`` for the integrator."""
    if variant == "flat":
        return _flat_field
    if variant == "hier":
        return partial(_hier_field, rate=float(scale.m))
    raise ConfigError(f"unknown variant {variant!r}")


def _rk4_step(rhs, x, u, h):
    k1 = rhs(x, u)
    k2 = rhs(x + 0.5 * h * k1, u)
    k3 = rhs(x + 0.5 * h * k2, u)
    k4 = rhs(x + h * k3, u)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_batch(rhs, x0, controls, steps_per_interval, h, record_every=None):
    """Integrate a batch with piecewise-constant controls.

    ``x0`` is ``(B, d)``; ``controls`` is ``(n_intervals, B, n_u)`` and each row is
    held for ``steps_per_interval`` RK4 steps of size ``h``. States are recorded
    every ``record_every`` steps (default: once per interval), including the
    initial state. Rows whose norm exceeds ``DIVERGENCE_NORM`` (or turns
    non-finite) at a record point are frozen and flagged.

    Returns ``(records, diverged, blowup_time)`` with ``records`` of shape
    ``(n_records, B, d)``; ``blowup_time`` is NaN for healthy rows.
    """
    x = np.array(x0, dtype=float)
    controls = np.asarray(controls, dtype=float)
    n_int = controls.shape[0]
    record_every = steps_per_interval if record_every is None else record_every
    if steps_per_interval % record_every:
        raise ValueError("record_every must divide steps_per_interval")
    n_total = n_int * steps_per_interval
    records = np.empty((n_total // record_every + 1,) + x.shape)
    records[0] = x
    diverged = np.zeros(x.shape[0], dtype=bool)
    blowup = np.full(x.shape[0], np.nan)
    k = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n_int):
            u = controls[i]
            for _ in range(steps_per_interval):
                x = _rk4_step(rhs, x, u, h)
                k += 1
                if k % record_every:
                    continue
                # divergence is only checked at record points; frozen rows keep their last record
                norms = np.linalg.norm(x, axis=1)
                fresh = ~(norms <= DIVERGENCE_NORM) & ~diverged
                if fresh.any():
                    blowup[fresh] = k * h
                    diverged |= fresh
                if diverged.any():
                    x = np.where(diverged[:, None], records[k // record_every - 1], x)
                records[k // record_every] = x
    return records, diverged, blowup


def integrate(rhs, state0, controls, t_end, step, control_dt=None):
    """Classical fixed-step RK4 for a single trajectory.

    ``controls`` is a piecewise-constant schedule with one row per interval of
    length ``control_dt`` (default ``t_end`` split evenly over the rows). The
    returned trajectory is sampled at every integration step.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    n_steps = int(round(t_end / step))
    if n_steps < 1 or not np.isclose(n_steps * step, t_end, rtol=0, atol=1e-12 * max(1.0, t_end)):
        raise ValueError("t_end must be an integer multiple of step")
    state0 = np.atleast_1d(np.asarray(state0, dtype=float))
    controls = np.asarray(controls, dtype=float)
    if controls.ndim == 1:
        controls = controls[None, :]
    n_int = controls.shape[0]
    if control_dt is None:
        control_dt = t_end / n_int
    per = int(round(control_dt / step))
    if per < 1 or per * n_int != n_steps:
        raise ValueError("control schedule does not tile [0, t_end] with the given step")
    records, diverged, blowup = rk4_batch(
        lambda x, u: rhs(x[0], u[0])[None, :], state0[None, :], controls[:, None, :], per, step, record_every=1
    )
    if diverged[0]:
        raise DivergenceError(float(blowup[0]), float(np.linalg.norm(records[-1, 0])))
    times = step * np.arange(n_steps + 1)
    return Trajectory(times=times, states=records[:, 0, :], controls=controls, variant="custom")


def simulate(variant, x0, controls, scale: ScaleConfig = ScaleConfig()):
    """Simulate a batch of benchmark trajectories at the slow sampling rate.

    ``x0`` is ``(B, d)``, ``controls`` is ``(n_steps, B, 2)``. Returns
    ``(states, diverged)`` with ``states`` of shape ``(n_steps + 1, B, d)``.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    controls = np.asarray(controls, dtype=float)
    if controls.ndim == 2:
        controls = controls[:, None, :]
    rhs = field_for(variant, scale)
    if variant == "flat":
        per, h = FLAT_SUBSTEPS, scale.dt_slow / FLAT_SUBSTEPS
    else:
        per = scale.m * HIER_SUBSTEPS_PER_TAU
        h = scale.tau / HIER_SUBSTEPS_PER_TAU
    records, diverged, _ = rk4_batch(rhs, x0, controls, per, h)
    return records, diverged


@dataclass
class SnapshotDataset:
    """Snapshot pairs over one slow interval per initial condition.

    ``states0``/``states1`` hold the full raw state at ``t`` and ``t + dt``;
    ``controls`` the control held over the interval. Hierarchical datasets also
    carry ``fast`` records of the full state at the ``m + 1`` sub-sample times
    ``t + n * tau`` (``n = 0..m``), i.e. ``m`` fast transition pairs.
    """

    variant: str
    states0: np.ndarray
    controls: np.ndarray
    states1: np.ndarray
    scale: ScaleConfig
    seed: int
    fast: np.ndarray | None = None
    n_discarded: int = 0

    @property
    def n_pairs(self) -> int:
        return self.states0.shape[0]

    @property
    def layout(self) -> dict:
        return FLAT_LAYOUT if self.variant == "flat" else HIER_LAYOUT

    def subset(self, idx) -> "SnapshotDataset":
        return SnapshotDataset(
            self.variant, self.states0[idx], self.controls[idx], self.states1[idx], self.scale, self.seed,
            None if self.fast is None else self.fast[idx], self.n_discarded,
        )

    def split(self, holdout_fraction=0.1, seed=0):
        """Seeded split by initial condition into (train, holdout)."""
        rng = np.random.default_rng(seed)
        perm = rng.permutation(self.n_pairs)
        n_hold = int(round(holdout_fraction * self.n_pairs))
        return self.subset(np.sort(perm[n_hold:])), self.subset(np.sort(perm[:n_hold]))

    def window_average(self, group, agent, spec):
        """Mean of the lifted fast observables over ``n = 0..m-1`` of each window."""
        if self.fast is None:
            raise MakoopError("dataset has no fast records")
        raw = self.fast[:, :-1, self.layout[group][agent]]
        return spec.lift(raw).mean(axis=1)

    def header(self) -> dict:
        return {
            "format": "makoop-snapshots",
            "version": 1,
            "variant": self.variant,
            "state_dim": int(self.states0.shape[1]),
            "control_dim": int(self.controls.shape[1]),
            "n_pairs": self.n_pairs,
            "n_fast_records": 0 if self.fast is None else int(self.fast.shape[1]),
            "seed": self.seed,
            "scale": asdict(self.scale),
            "n_discarded": self.n_discarded,
        }

    def save(self, path):
        arrays = {"states0": self.states0, "controls": self.controls, "states1": self.states1}
        if self.fast is not None:
            arrays["fast"] = self.fast
        np.savez(path, header=np.array(json.dumps(self.header())), **arrays)

    @classmethod
    def load(cls, path) -> "SnapshotDataset":
        with np.load(path) as f:
            header = json.loads(str(f["header"]))
            fast = f["fast"] if "fast" in f.files else None
            return cls(
                variant=header["variant"], states0=f["states0"], controls=f["controls"], states1=f["states1"],
                scale=ScaleConfig(**header["scale"]), seed=header["seed"], fast=fast,
                n_discarded=header["n_discarded"],
            )


def sample_box(rng, n, dim, half_width=1.0):
    return rng.uniform(-half_width, half_width, size=(n, dim))


def generate_dataset(variant, n_ic, scale: ScaleConfig = ScaleConfig(), seed=0, chunk=2000):
    """Sample initial conditions and controls in ``[-1, 1]`` and simulate one slow step.

    Divergent samples are dropped (and logged); more than 10 % dropped is an error.
    """
    if n_ic < 1:
        raise ConfigError("n_ic must be >= 1")
    if variant not in STATE_DIM:
        raise ConfigError(f"unknown variant {variant!r}")
    rng = np.random.default_rng(seed)
    d = STATE_DIM[variant]
    x0 = sample_box(rng, n_ic, d)
    u = sample_box(rng, n_ic, CONTROL_DIM)
    rhs = field_for(variant, scale)
    s1 = np.empty_like(x0)
    fast = None
    diverged = np.zeros(n_ic, dtype=bool)
    if variant == "flat":
        for lo in range(0, n_ic, chunk):
            sl = slice(lo, lo + chunk)
            rec, div, _ = rk4_batch(rhs, x0[sl], u[None, sl], FLAT_SUBSTEPS, scale.dt_slow / FLAT_SUBSTEPS)
            s1[sl], diverged[sl] = rec[-1], div
    else:
        fast = np.empty((n_ic, scale.m + 1, d))
        per = scale.m * HIER_SUBSTEPS_PER_TAU
        for lo in range(0, n_ic, chunk):
            sl = slice(lo, lo + chunk)
            rec, div, _ = rk4_batch(rhs, x0[sl], u[None, sl], per, scale.tau / HIER_SUBSTEPS_PER_TAU,
                                    record_every=HIER_SUBSTEPS_PER_TAU)
            fast[sl] = rec.transpose(1, 0, 2)
            s1[sl], diverged[sl] = rec[-1], div
    n_bad = int(diverged.sum())
    if n_bad:
        log.warning("discarded %d of %d divergent samples", n_bad, n_ic)
    if n_bad > MAX_DISCARD_FRACTION * n_ic:
        raise DivergenceError(float("nan"), float("inf"),
                              f"{n_bad} of {n_ic} samples diverged (limit {MAX_DISCARD_FRACTION:.0%})")
    keep = ~diverged
    return SnapshotDataset(
        variant=variant, states0=x0[keep], controls=u[keep], states1=s1[keep], scale=scale, seed=seed,
        fast=None if fast is None else fast[keep], n_discarded=n_bad,
    )
