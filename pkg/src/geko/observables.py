"""Lifting maps and the lifted data matrices.

An :class:`ObservableMap` evaluates a stack of scalar observables. Applied to
a single point it returns a feature vector; :meth:`ObservableMap.lift` maps a
``(k, d)`` array of points to a ``(n_features, k)`` data matrix.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre as npleg

from .dynamics import SnapshotBatch, Trajectory, sample_box
from .errors import DimensionError, ParameterError
from .numerics import as_sequence, hankel, svd_reduce

KINDS = ("identity", "affine", "imq", "kic", "legendre", "monomial", "delay")


def imq_features(point, centers, sigma: float, beta: float = 1.0) -> np.ndarray:
    """Inverse multiquadric features ``(1 + |c_i - x|^2 / sigma^2)^(-beta)``."""
    if not sigma > 0 or not beta > 0:
        raise ParameterError(f"IMQ needs sigma > 0 and beta > 0, got sigma={sigma}, beta={beta}")
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    x = np.asarray(point, dtype=float).reshape(-1)
    if x.size != centers.shape[1]:
        raise DimensionError(
            f"point has dimension {x.size}, centers have dimension {centers.shape[1]}"
        )
    d2 = np.sum((centers - x) ** 2, axis=1)
    return (1.0 + d2 / sigma**2) ** (-beta)


def _imq_matrix(points, centers, sigma, beta):
    # (k, d), (c, d) -> (c, k); exact differences so a hit on a center gives 1
    k = points.shape[0]
    d2 = np.empty((centers.shape[0], k))
    chunk = max(1, 2_000_000 // max(1, centers.size))
    for s in range(0, k, chunk):
        diff = centers[:, None, :] - points[None, s : s + chunk, :]
        d2[:, s : s + chunk] = np.einsum("ckd,ckd->ck", diff, diff)
    out = 1.0 + d2 / sigma**2
    return out ** (-beta) if beta != 1.0 else 1.0 / out


def kic_features(state, inp, centers, sigma: float) -> np.ndarray:
    """IMQ features (beta = 1) of the stacked vector ``col(state, input)``."""
    z = np.concatenate([np.ravel(state), np.ravel(inp)])
    return imq_features(z, centers, sigma, 1.0)


def delay_features(signal, t: int, order: int) -> np.ndarray:
    """``col(s_t, ..., s_{t+order-1})``."""
    s = as_sequence(signal)
    if order < 1:
        raise ParameterError("delay order must be >= 1")
    if t < 0 or t + order > s.shape[0]:
        raise IndexError(
            f"delay window [{t}, {t + order - 1}] outside signal of length {s.shape[0]}"
        )
    return s[t : t + order].reshape(-1)


def sample_centers(box, count: int, method: str = "uniform", seed: int = 0) -> np.ndarray:
    if count < 1:
        raise ParameterError("count must be >= 1")
    rng = np.random.default_rng(seed)
    return sample_box(box, count, method, rng)


def _normalized_legendre(k: int, t: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Legendre polynomial of degree k orthonormal on [lo, hi] (Lebesgue)."""
    s = 2.0 * (t - lo) / (hi - lo) - 1.0
    coef = np.zeros(k + 1)
    coef[k] = 1.0
    return np.sqrt((2 * k + 1) / (hi - lo)) * npleg.legval(s, coef)


@dataclass(frozen=True, eq=False)
class ObservableMap:
    """A stack of observables with the metadata needed to rebuild it."""

    kind: str
    input_dim: int
    centers: np.ndarray | None = None
    sigma: float | None = None
    beta: float = 1.0
    degree: int | None = None
    box: tuple | None = None
    seed: int | None = None
    method: str | None = None
    order: int | None = None
    projection: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown observable kind {self.kind!r}")
        if self.kind in ("imq", "kic"):
            if self.centers is None:
                raise ParameterError(f"{self.kind} map needs centers")
            c = np.atleast_2d(np.asarray(self.centers, dtype=float))
            if c.shape[1] != self.input_dim:
                raise DimensionError(
                    f"centers have dimension {c.shape[1]}, map input dimension is {self.input_dim}"
                )
            object.__setattr__(self, "centers", c)
            if self.sigma is None or not self.sigma > 0 or not self.beta > 0:
                raise ParameterError("IMQ map needs sigma > 0 and beta > 0")
            if self.kind == "kic" and self.beta != 1.0:
                raise ParameterError("KIC features use beta = 1")
        if self.kind in ("legendre", "monomial"):
            if self.degree is None or self.degree < 0:
                raise ParameterError(f"{self.kind} map needs a non-negative degree")
        if self.kind == "legendre" and self.box is None:
            raise ParameterError("legendre map needs a box")
        if self.box is not None:
            lo, hi = (np.asarray(b, dtype=float).reshape(-1) for b in self.box)
            if lo.size != self.input_dim or hi.size != self.input_dim:
                raise DimensionError("box dimension does not match map input dimension")
            object.__setattr__(self, "box", (lo, hi))
            if self.centers is not None:
                c = self.centers
                if np.any(c < lo) or np.any(c > hi):
                    raise ParameterError("IMQ centers must lie inside the declared box")
        if self.kind == "delay" and (self.order is None or self.order < 1):
            raise ParameterError("delay map needs order >= 1")
        if self.projection is not None:
            object.__setattr__(self, "projection", np.atleast_2d(np.asarray(self.projection, dtype=float)))

    # -- dimensions --------------------------------------------------------
    @property
    def output_dim(self) -> int:
        k = self.kind
        if k == "identity":
            return self.input_dim
        if k == "affine":
            return self.input_dim + 1
        if k in ("imq", "kic"):
            return self.centers.shape[0]
        if k in ("legendre", "monomial"):
            return (self.degree + 1) ** self.input_dim
        # delay
        if self.projection is not None:
            return self.projection.shape[1]
        return self.order * self.input_dim

    def multi_indices(self):
        """Per-axis degrees of each tensor basis function, first axis outermost."""
        return list(itertools.product(range(self.degree + 1), repeat=self.input_dim))

    # -- evaluation ------------------------------------------------------
    def lift(self, points) -> np.ndarray:
        """Map points ``(k, input_dim)`` to a ``(output_dim, k)`` data matrix."""
        if self.kind == "delay":
            raise ParameterError("delay maps act on sequences, use lift_sequence")
        P = np.asarray(points, dtype=float)
        if P.ndim == 1:
            P = P.reshape(-1, self.input_dim) if self.input_dim == 1 else P[None, :]
        if P.ndim != 2 or P.shape[1] != self.input_dim:
            raise DimensionError(
                f"{self.kind} map expects points of dimension {self.input_dim}, got shape {P.shape}"
            )
        k = self.kind
        if k == "identity":
            return P.T.copy()
        if k == "affine":
            return np.vstack([np.ones((1, P.shape[0])), P.T])
        if k in ("imq", "kic"):
            return _imq_matrix(P, self.centers, self.sigma, self.beta)
        per_axis = []
        for a in range(self.input_dim):
            t = P[:, a]
            if k == "legendre":
                lo, hi = self.box[0][a], self.box[1][a]
                per_axis.append([_normalized_legendre(j, t, lo, hi) for j in range(self.degree + 1)])
            else:
                per_axis.append([t**j for j in range(self.degree + 1)])
        rows = []
        for idx in self.multi_indices():
            r = np.ones(P.shape[0])
            for a, j in enumerate(idx):
                r = r * per_axis[a][j]
            rows.append(r)
        return np.array(rows)

    def __call__(self, point) -> np.ndarray:
        x = np.asarray(point, dtype=float).reshape(1, -1)
        return self.lift(x)[:, 0]

    def lift_sequence(self, signal) -> np.ndarray:
        """Delay-embed a time-major signal: column ``t`` stacks ``s_t..s_{t+order-1}``."""
        if self.kind != "delay":
            return self.lift(as_sequence(signal))
        H = hankel(as_sequence(signal), self.order)
        if self.projection is not None:
            H = self.projection.T @ H
        return H

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        d = {"kind": self.kind, "input_dim": self.input_dim}
        if self.centers is not None:
            d["centers"] = self.centers.tolist()
        for key in ("sigma", "degree", "seed", "method", "order"):
            val = getattr(self, key)
            if val is not None:
                d[key] = val
        if self.kind in ("imq", "kic"):
            d["beta"] = self.beta
        if self.box is not None:
            d["box"] = [self.box[0].tolist(), self.box[1].tolist()]
        if self.projection is not None:
            d["projection"] = self.projection.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ObservableMap":
        kw = dict(d)
        if "centers" in kw:
            kw["centers"] = np.array(kw["centers"], dtype=float)
        if "projection" in kw:
            kw["projection"] = np.array(kw["projection"], dtype=float)
        if "box" in kw:
            kw["box"] = tuple(np.array(b, dtype=float) for b in kw["box"])
        return cls(**kw)


# -- constructors ------------------------------------------------------------

def identity_map(dim: int) -> ObservableMap:
    return ObservableMap("identity", dim)


def affine_map(dim: int) -> ObservableMap:
    """``col(1, x)``."""
    return ObservableMap("affine", dim)


def imq_map(box, count: int, sigma: float, beta: float = 1.0, method: str = "uniform", seed: int = 0) -> ObservableMap:
    """IMQ features with ``count`` centers sampled from ``box``."""
    centers = sample_centers(box, count, method, seed)
    return ObservableMap(
        "imq", centers.shape[1], centers=centers, sigma=sigma, beta=beta, box=box, seed=seed, method=method
    )


def kic_map(x_box, u_box, count: int, sigma: float, method: str = "uniform", seed: int = 0) -> ObservableMap:
    """IMQ features on the stacked space ``col(x, u)``."""
    lo = np.concatenate([np.ravel(x_box[0]), np.ravel(u_box[0])])
    hi = np.concatenate([np.ravel(x_box[1]), np.ravel(u_box[1])])
    centers = sample_centers((lo, hi), count, method, seed)
    return ObservableMap(
        "kic", lo.size, centers=centers, sigma=sigma, beta=1.0, box=(lo, hi), seed=seed, method=method
    )


def legendre_map(box, degree: int) -> ObservableMap:
    """Tensor Legendre basis, orthonormal on ``box`` w.r.t. Lebesgue measure."""
    lo = np.ravel(np.asarray(box[0], dtype=float))
    return ObservableMap("legendre", lo.size, degree=degree, box=box)


def monomial_map(dim: int, degree: int) -> ObservableMap:
    return ObservableMap("monomial", dim, degree=degree)


def delay_map(dim: int, order: int, projection=None) -> ObservableMap:
    return ObservableMap("delay", dim, order=order, projection=projection)


# -- lifted data ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LiftedData:
    """Aligned data matrices; column ``t`` of every matrix refers to sample ``t``."""

    Z_X: np.ndarray
    V_U: np.ndarray
    Z_X_plus: np.ndarray
    X_plus: np.ndarray
    W: np.ndarray | None = None
    X: np.ndarray | None = None
    U: np.ndarray | None = None

    def __post_init__(self):
        for name in ("Z_X", "V_U", "Z_X_plus", "X_plus", "W", "X", "U"):
            if getattr(self, name) is not None:
                object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        T = self.Z_X.shape[1]
        for name in ("V_U", "Z_X_plus", "X_plus", "W", "X", "U"):
            M = getattr(self, name)
            if M is not None and M.shape[1] != T:
                raise DimensionError(f"{name} has {M.shape[1]} columns, Z_X has {T}")

    @property
    def T(self) -> int:
        return self.Z_X.shape[1]

    @property
    def n_z(self) -> int:
        return self.Z_X.shape[0]

    @property
    def n_v(self) -> int:
        return self.V_U.shape[0]


def _check_map(psi: ObservableMap, dim: int, name: str):
    if psi.input_dim != dim:
        raise DimensionError(f"{name} expects input dimension {psi.input_dim}, data has {dim}")


def lift_trajectory(data, psi_x: ObservableMap, psi_u: ObservableMap, psi_y: ObservableMap | None = None) -> LiftedData:
    """Lift a trajectory or snapshot batch into ``Z_X``, ``V_U``, ``Z_X_plus`` (and ``W``)."""
    if isinstance(data, Trajectory):
        data = data.snapshots()
    if not isinstance(data, SnapshotBatch):
        raise TypeError("expected a Trajectory or SnapshotBatch")
    x, u, xn = (np.atleast_2d(a) for a in (data.x, data.u, data.x_next))
    _check_map(psi_x, x.shape[1], "psi_x")
    _check_map(psi_u, u.shape[1], "psi_u")
    W = None
    if psi_y is not None:
        if data.y is None:
            raise DimensionError("psi_y given but the data carry no outputs")
        _check_map(psi_y, data.y.shape[1], "psi_y")
        W = psi_y.lift(data.y)
    return LiftedData(
        Z_X=psi_x.lift(x),
        V_U=psi_u.lift(u),
        Z_X_plus=psi_x.lift(xn),
        X_plus=xn.T.copy(),
        W=W,
        X=x.T.copy(),
        U=u.T.copy(),
    )


def havok_lift(states, inputs, x_order: int, u_order: int, rank=None):
    """Delay-embedding (HAVOK) data matrices.

    Builds ``H_X`` from ``x_order`` delayed states and ``H_U`` from
    ``u_order`` delayed raw inputs, reduces ``H_X`` to ``Z_r = S_r V_r^T``
    (when ``rank`` is given, integer order or energy fraction), and pairs
    consecutive columns: ``Z_X = Z_r[:, :-1]``, ``Z_X_plus = Z_r[:, 1:]``.
    The raw next state stored for decoding is the first state of the next
    window.

    Returns the lifted data and the state delay map (carrying the projection
    ``U_r`` so new windows lift as ``U_r^T col(x_t..x_{t+q-1})``).
    """
    X = as_sequence(states, "states")
    U = as_sequence(inputs, "inputs")
    if U.shape[0] < X.shape[0] - 1:
        raise DimensionError("need one input per transition")
    width = min(X.shape[0] - x_order, U.shape[0] - u_order)
    if width < 1:
        raise DimensionError("trajectory too short for the requested delay orders")
    H_X = hankel(X, x_order, width)
    H_U = hankel(U, u_order, width)
    projection = None
    Z = H_X
    if rank is not None:
        svd, Z = svd_reduce(H_X, rank)
        projection = svd.U_r
    psi = delay_map(X.shape[1], x_order, projection)
    data = LiftedData(
        Z_X=Z[:, :-1],
        V_U=H_U[:, :-1],
        Z_X_plus=Z[:, 1:],
        X_plus=X[1 : width + 1].T.copy(),
        X=X[:width].T.copy(),
        U=U[:width].T.copy(),
    )
    return data, psi
