"""Benchmark systems, fixed-step integration, rollouts and snapshot sampling.

All state maps are vectorized: ``step(x, u)`` accepts ``x`` of shape
``(..., n)`` and ``u`` of shape ``(..., m)`` and returns ``(..., n)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DimensionError, DivergenceError, ParameterError
from .numerics import as_sequence, kron_vec


def _box(box, dim, name):
    lo, hi = (np.asarray(b, dtype=float).reshape(-1) for b in box)
    if lo.size == 1 and dim > 1:
        lo, hi = np.full(dim, lo[0]), np.full(dim, hi[0])
    if lo.size != dim or hi.size != dim:
        raise DimensionError(f"{name} box has wrong dimension (expected {dim})")
    if np.any(lo > hi):
        raise ParameterError(f"{name} box has lower bound above upper bound")
    return lo, hi


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """Discrete-time system ``x+ = step(x, u)``, ``y = output(x)``."""

    name: str
    n: int
    m: int
    p: int
    step: Callable
    output: Callable
    x_box: tuple
    u_box: tuple
    Ts: float | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "x_box", _box(self.x_box, self.n, "state"))
        object.__setattr__(self, "u_box", _box(self.u_box, self.m, "input"))

    def in_box(self, x) -> bool:
        lo, hi = self.x_box
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= lo) and np.all(x <= hi))


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray  # (T+1, n)
    inputs: np.ndarray  # (T, m)
    outputs: np.ndarray  # (T+1, p)
    Ts: float | None = None

    def __post_init__(self):
        T = self.inputs.shape[0]
        if self.states.shape[0] != T + 1 or self.outputs.shape[0] != T + 1:
            raise DimensionError(
                f"inconsistent trajectory lengths: states {self.states.shape[0]}, "
                f"inputs {T}, outputs {self.outputs.shape[0]}"
            )

    @property
    def length(self) -> int:
        """Number of transitions."""
        return self.inputs.shape[0]

    def snapshots(self) -> "SnapshotBatch":
        """Consecutive pairs as a snapshot batch; the last transition has no next input."""
        T = self.length
        u_next = np.full_like(self.inputs, np.nan)
        u_next[:-1] = self.inputs[1:]
        return SnapshotBatch(
            x=self.states[:T].copy(),
            u=self.inputs.copy(),
            x_next=self.states[1:].copy(),
            u_next=u_next,
            y=self.outputs[:T].copy(),
        )


@dataclass(frozen=True, eq=False)
class SnapshotBatch:
    """Triples ``(x_t, u_t, x_{t+1})`` stored row-wise.

    ``u_next`` is the input applied after ``x_next`` (needed by the stacked
    KIC embedding); for i.i.d. samplers it is an independent draw.
    """

    x: np.ndarray
    u: np.ndarray
    x_next: np.ndarray
    u_next: np.ndarray | None = None
    y: np.ndarray | None = None

    def __len__(self):
        return self.x.shape[0]


# -- vector fields and integration -----------------------------------------

def vdp_vector_field(x, u, mu: float = 1.2):
    """Forced Van der Pol oscillator: ``[x2, mu (1 - x1^2) x2 - x1 + u]``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    x1 = x[..., 0]
    x2 = x[..., 1]
    uu = u[..., 0] if u.ndim and u.shape[-1:] == (1,) else u
    return np.stack([x2, mu * (1.0 - x1**2) * x2 - x1 + uu], axis=-1)


def integrate_step(field, x, u, Ts: float, substeps: int = 10):
    """Classical RK4 over one sampling interval with the input held constant."""
    if substeps < 1:
        raise ParameterError("substeps must be >= 1")
    h = Ts / substeps
    x = np.asarray(x, dtype=float)
    for k in range(substeps):
        k1 = field(x, u)
        k2 = field(x + 0.5 * h * k1, u)
        k3 = field(x + 0.5 * h * k2, u)
        k4 = field(x + h * k3, u)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite state at substep {k}", step=k)
    return x


# -- system constructors ----------------------------------------------------

def van_der_pol(
    mu: float = 1.2,
    Ts: float = 0.1,
    substeps: int = 10,
    x_box=((-3.0, -3.0), (3.0, 3.0)),
    u_box=((-1.0,), (1.0,)),
) -> SystemSpec:
    def field(x, u):
        return vdp_vector_field(x, u, mu)

    def step(x, u):
        return integrate_step(field, x, u, Ts, substeps)

    return SystemSpec(
        name="vdp",
        n=2,
        m=1,
        p=2,
        step=step,
        output=lambda x: np.asarray(x, dtype=float).copy(),
        x_box=x_box,
        u_box=u_box,
        Ts=Ts,
        params={"mu": mu, "substeps": substeps},
    )


def lti(A, B, C=None, x_box=None, u_box=None) -> SystemSpec:
    """``x+ = A x + B u``, ``y = C x`` (``C`` defaults to the identity)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    n, m = B.shape
    C = np.eye(n) if C is None else np.atleast_2d(np.asarray(C, dtype=float))
    x_box = x_box if x_box is not None else (-np.ones(n), np.ones(n))
    u_box = u_box if u_box is not None else (-np.ones(m), np.ones(m))
    return SystemSpec(
        name="lti",
        n=n,
        m=m,
        p=C.shape[0],
        step=lambda x, u: np.asarray(x, float) @ A.T + np.asarray(u, float) @ B.T,
        output=lambda x: np.asarray(x, float) @ C.T,
        x_box=x_box,
        u_box=u_box,
        params={"A": A, "B": B, "C": C},
    )


def bilinear(K, n_v: int, x_box=None, u_box=None) -> SystemSpec:
    """Exactly bilinear system ``z+ = K (z kron v)`` in raw coordinates."""
    K = np.asarray(K, dtype=float)
    n_z = K.shape[0]
    if K.shape[1] != n_z * n_v:
        raise DimensionError(f"K must be {n_z} x {n_z * n_v}, got {K.shape}")

    def step(z, v):
        z = np.asarray(z, float)
        v = np.asarray(v, float)
        zv = (z[..., :, None] * v[..., None, :]).reshape(*z.shape[:-1], n_z * n_v)
        return zv @ K.T

    return SystemSpec(
        name="bilinear",
        n=n_z,
        m=n_v,
        p=n_z,
        step=step,
        output=lambda z: np.asarray(z, float).copy(),
        x_box=x_box if x_box is not None else (-np.ones(n_z), np.ones(n_z)),
        u_box=u_box if u_box is not None else (-np.ones(n_v), np.ones(n_v)),
        params={"K": K},
    )


def from_map(step, n: int, m: int, output=None, p: int | None = None, x_box=None, u_box=None, name="map"):
    """Wrap an arbitrary vectorized map as a system."""
    return SystemSpec(
        name=name,
        n=n,
        m=m,
        p=p if p is not None else n,
        step=step,
        output=output if output is not None else (lambda x: np.asarray(x, float).copy()),
        x_box=x_box if x_box is not None else (-np.ones(n), np.ones(n)),
        u_box=u_box if u_box is not None else (-np.ones(m), np.ones(m)),
    )


def random_bilinear_operator(n_z: int, n_v: int, rng, scale: float = 1.0) -> np.ndarray:
    return scale * rng.standard_normal((n_z, n_z * n_v)) / np.sqrt(n_z * n_v)


def normalized_bilinear_run(K, inputs, z0):
    """Roll ``z+ = K (z kron v)`` and rescale ``K`` so ``|z_T| = |z_0|``.

    The map is homogeneous in ``z``, so scaling ``K`` by ``c`` scales ``z_t``
    by ``c**t``; this keeps long excitation runs O(1) without changing the
    trajectory's direction. Returns the rescaled operator and the states.
    """
    K = np.asarray(K, dtype=float)
    inputs = as_sequence(inputs)
    z = np.asarray(z0, dtype=float)
    z = z / np.linalg.norm(z)
    log_growth = 0.0
    for v in inputs:
        z = K @ kron_vec(z, v)
        nrm = np.linalg.norm(z)
        log_growth += np.log(nrm)
        z = z / nrm
    Ks = K * np.exp(-log_growth / len(inputs))
    zs = [np.asarray(z0, dtype=float)]
    for v in inputs:
        zs.append(Ks @ kron_vec(zs[-1], v))
    return Ks, np.array(zs)


# -- trajectories and sampling ---------------------------------------------

def rollout(system: SystemSpec, x0, inputs) -> Trajectory:
    x0 = np.asarray(x0, dtype=float).reshape(system.n)
    inputs = np.asarray(inputs, dtype=float).reshape(-1, system.m)
    if not system.in_box(x0):
        warnings.warn(f"initial state {x0} lies outside the state box", stacklevel=2)
    states = np.empty((inputs.shape[0] + 1, system.n))
    states[0] = x0
    for t, u in enumerate(inputs):
        try:
            states[t + 1] = system.step(states[t], u)
        except DivergenceError as exc:
            raise DivergenceError(f"rollout diverged at time index {t}: {exc}", step=t) from None
        if not np.all(np.isfinite(states[t + 1])):
            raise DivergenceError(f"rollout diverged at time index {t}", step=t)
    outputs = np.asarray(system.output(states), dtype=float).reshape(states.shape[0], system.p)
    return Trajectory(states=states, inputs=inputs, outputs=outputs, Ts=system.Ts)


def sinusoid_input(amplitude: float, frequency: float, length: int) -> np.ndarray:
    """``u_t = amplitude * sin(frequency * t)`` for ``t = 0..length-1``, shape ``(length, 1)``."""
    if length < 0:
        raise ParameterError("length must be >= 0")
    t = np.arange(length, dtype=float)
    return (amplitude * np.sin(frequency * t))[:, None]


def sample_box(box, count: int, method: str, rng) -> np.ndarray:
    """Draw ``count`` points in a box.

    ``uniform`` draws inside the box; ``gaussian`` draws around the midpoint
    with per-axis standard deviation of a quarter box width, redrawing points
    that fall outside so every sample lies in the box.
    """
    lo, hi = (np.asarray(b, dtype=float).reshape(-1) for b in box)
    d = lo.size
    if method == "uniform":
        return rng.uniform(lo, hi, size=(count, d))
    if method == "gaussian":
        mid, sd = 0.5 * (lo + hi), 0.25 * (hi - lo)
        out = mid + sd * rng.standard_normal((count, d))
        bad = np.any((out < lo) | (out > hi), axis=1)
        while np.any(bad):
            out[bad] = mid + sd * rng.standard_normal((int(bad.sum()), d))
            bad = np.any((out < lo) | (out > hi), axis=1)
        return out
    raise ParameterError(f"unknown sampling method {method!r}")


def _apply_step(system, x, u):
    try:
        xn = np.asarray(system.step(x, u), dtype=float).reshape(x.shape[0], system.n)
    except DivergenceError:
        xn = None
    if xn is not None and np.all(np.isfinite(xn)):
        return xn
    # locate the offending sample
    for i in range(x.shape[0]):
        try:
            xi = system.step(x[i], u[i])
        except DivergenceError:
            xi = np.array([np.nan])
        if not np.all(np.isfinite(xi)):
            raise DivergenceError(f"state map diverged for sample {i}", step=i)
    raise DivergenceError("state map diverged on the batch")


def sample_snapshots(
    system: SystemSpec,
    count: int,
    sampler: str = "uniform",
    seed: int = 0,
    chain_length: int = 50,
) -> SnapshotBatch:
    """Generate ``count`` snapshots ``(x, u, F(x, u))``.

    Samplers: ``uniform`` / ``gaussian`` draw i.i.d. pairs from the boxes
    (rows drawn jointly so a larger count extends a smaller one); ``center``
    repeats the box centers; ``rollout`` chains trajectories of
    ``chain_length`` steps from random initial states under i.i.d. uniform
    inputs.
    """
    if count < 1:
        raise ParameterError("count must be >= 1")
    n, m = system.n, system.m
    rng = np.random.default_rng(seed)
    if sampler == "center":
        x = np.tile(0.5 * (system.x_box[0] + system.x_box[1]), (count, 1))
        u = np.tile(0.5 * (system.u_box[0] + system.u_box[1]), (count, 1))
        u_next = u.copy()
    elif sampler in ("uniform", "gaussian"):
        lo = np.concatenate([system.x_box[0], system.u_box[0], system.u_box[0]])
        hi = np.concatenate([system.x_box[1], system.u_box[1], system.u_box[1]])
        draws = sample_box((lo, hi), count, sampler, rng)
        x, u, u_next = draws[:, :n], draws[:, n : n + m], draws[:, n + m :]
    elif sampler == "rollout":
        xs, us, xns, uns = [], [], [], []
        total = 0
        while total < count:
            L = min(chain_length, count - total)
            x0 = sample_box(system.x_box, 1, "uniform", rng)[0]
            inp = sample_box(system.u_box, L + 1, "uniform", rng)
            traj = rollout(system, x0, inp[:L])
            xs.append(traj.states[:L])
            xns.append(traj.states[1:])
            us.append(inp[:L])
            uns.append(inp[1:])
            total += L
        x, u = np.vstack(xs), np.vstack(us)
        x_next, u_next = np.vstack(xns), np.vstack(uns)
        y = np.asarray(system.output(x), dtype=float).reshape(count, system.p)
        return SnapshotBatch(x=x, u=u, x_next=x_next, u_next=u_next, y=y)
    else:
        raise ParameterError(f"unknown sampler {sampler!r}")
    x_next = _apply_step(system, x, u)
    y = np.asarray(system.output(x), dtype=float).reshape(count, system.p)
    return SnapshotBatch(x=x, u=u, x_next=x_next, u_next=u_next, y=y)
