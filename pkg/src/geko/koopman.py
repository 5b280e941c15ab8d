"""Generalized Koopman models on the product feature space.

The lifted model is bilinear, ``z_{t+1} = K (z_t kron v_t)`` with ``K`` of
shape ``(n_z, n_z * n_v)``. ``fit_geko`` estimates ``K`` by ridge regression
on the Khatri-Rao regressor ``Z_X . V_U``; ``analytic_koopman`` builds the
same truncated operator from the map ``F`` by quadrature, ``K = Q_x R^{-1}``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .dynamics import SnapshotBatch, Trajectory
from .errors import DimensionError, DivergenceError, ParameterError, RankError
from .numerics import khatri_rao, kron_vec, numerical_rank, solve_operator
from .observables import LiftedData, ObservableMap

log = logging.getLogger(__name__)

DEFAULT_GAMMA = 1e-6


@dataclass(frozen=True, eq=False)
class KoopmanModel:
    """A fitted model and the observables defining its domain.

    Attributes
    ----------
    method : str
        ``geko``, ``direct``, ``kic`` or ``havok``.
    K : ndarray or None
        Lifted operator. ``(n_z, n_z*n_v)`` for product-space models,
        ``(n_s, n_s)`` for the stacked KIC embedding.
    C : ndarray or None
        Output operator, ``w = C z``.
    K_direct : ndarray or None
        Map from the regressor (``z kron v``, or stacked KIC features)
        straight to the next raw state.
    D : ndarray or None
        Linear decoder ``x ~ D z``.
    diagnostics : dict
        ``residual``, ``rank``, ``gamma`` and friends from the fit.
    """

    method: str
    psi_x: ObservableMap
    psi_u: ObservableMap | None = None
    psi_y: ObservableMap | None = None
    K: np.ndarray | None = None
    C: np.ndarray | None = None
    K_direct: np.ndarray | None = None
    D: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("K", "C", "K_direct", "D"):
            M = getattr(self, name)
            if M is not None and not np.all(np.isfinite(M)):
                raise DivergenceError(f"fitted {name} contains non-finite entries")
        if self.K is not None and self.method != "kic":
            if self.K.shape[1] != self.n_z * self.n_v:
                raise DimensionError(
                    f"K has {self.K.shape[1]} columns, expected n_z*n_v = {self.n_z * self.n_v}"
                )

    @property
    def n_z(self) -> int:
        return self.psi_x.output_dim

    @property
    def n_v(self) -> int:
        return self.psi_u.output_dim if self.psi_u is not None else 1


def _regressor(data: LiftedData) -> np.ndarray:
    A = khatri_rao(data.Z_X, data.V_U)
    if data.T < A.shape[0]:
        warnings.warn(
            f"only {data.T} samples for {A.shape[0]} product features; "
            "the regressor cannot have full row rank",
            stacklevel=3,
        )
    return A


def _rank_hint(exc: RankError) -> RankError:
    return RankError(
        f"{exc} -- the Khatri-Rao regressor (Z_X . V_U) must have full row rank; "
        "add data or use gamma > 0",
        rank=exc.rank,
        required=exc.required,
    )


def _solve(Y, A, gamma, method):
    try:
        return solve_operator(Y, A, gamma, method=method)
    except RankError as exc:
        raise _rank_hint(exc) from None


def fit_geko(
    data: LiftedData,
    gamma: float = DEFAULT_GAMMA,
    psi_x: ObservableMap | None = None,
    psi_u: ObservableMap | None = None,
    decoder: str | None = "direct",
    method: str = "ridge",
) -> KoopmanModel:
    """Khatri-Rao EDMD, ``K = Z_X_plus pinv(Z_X . V_U, gamma)``.

    ``decoder="direct"`` also regresses the raw next state on the same
    regressor (one factorization serves both); ``"linear"`` fits
    ``x ~ D z`` instead; ``None`` fits ``K`` only.
    """
    A = _regressor(data)
    n_z = data.n_z
    Y = data.Z_X_plus
    if decoder == "direct":
        Y = np.vstack([Y, data.X_plus])
    elif decoder not in (None, "linear"):
        raise ParameterError(f"unknown decoder {decoder!r}")
    M, info = _solve(Y, A, gamma, method)
    K = M[:n_z]
    K_direct = M[n_z:] if decoder == "direct" else None
    D = None
    if decoder == "linear":
        if data.X is None:
            raise DimensionError("linear decoder needs raw states in the lifted data")
        D, _ = _solve(data.X, data.Z_X, gamma, method)
    diagnostics = {
        "residual": float(np.linalg.norm(K @ A - data.Z_X_plus)),
        "rank": info.rank,
        "features": A.shape[0],
        "samples": data.T,
        "gamma": info.gamma,
        "smallest_sv": info.smallest_sv,
        "largest_sv": info.largest_sv,
    }
    if K_direct is not None:
        diagnostics["direct_residual"] = float(np.linalg.norm(K_direct @ A - data.X_plus))
    log.debug("fit_geko: %s", diagnostics)
    return KoopmanModel(
        method="geko",
        psi_x=psi_x if psi_x is not None else _placeholder(n_z),
        psi_u=psi_u if psi_u is not None else _placeholder(data.n_v),
        K=K,
        K_direct=K_direct,
        D=D,
        diagnostics=diagnostics,
    )


def _placeholder(dim):
    # observables unknown to the fit (pre-lifted data): record dimensions only
    return ObservableMap("identity", dim)


def fit_direct(
    data: LiftedData,
    gamma: float = DEFAULT_GAMMA,
    psi_x: ObservableMap | None = None,
    psi_u: ObservableMap | None = None,
    method: str = "ridge",
) -> KoopmanModel:
    """Regress the raw next state on ``Z_X . V_U`` (no decoder needed)."""
    A = _regressor(data)
    K_direct, info = _solve(data.X_plus, A, gamma, method)
    return KoopmanModel(
        method="direct",
        psi_x=psi_x if psi_x is not None else _placeholder(data.n_z),
        psi_u=psi_u if psi_u is not None else _placeholder(data.n_v),
        K_direct=K_direct,
        diagnostics={
            "residual": info.residual,
            "rank": info.rank,
            "features": A.shape[0],
            "samples": data.T,
            "gamma": info.gamma,
            "smallest_sv": info.smallest_sv,
            "largest_sv": info.largest_sv,
        },
    )


def fit_kic(
    snapshots: SnapshotBatch,
    centers,
    sigma: float = 1.0,
    gamma: float = DEFAULT_GAMMA,
    mode: str = "lifted",
    psi: ObservableMap | None = None,
    method: str = "ridge",
) -> KoopmanModel:
    """Stacked-observable baseline on features of ``col(x, u)``.

    ``mode="lifted"`` regresses the next stacked features
    ``psi(col(x_{t+1}, u_{t+1}))`` on ``psi(col(x_t, u_t))``, the open-loop
    input embedding; samples without a next input are dropped.
    ``mode="state"`` regresses the raw next state only. Both modes also fit
    ``K_direct`` (features to next raw state) for decoding.
    """
    if isinstance(snapshots, Trajectory):
        snapshots = snapshots.snapshots()
    if psi is None:
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        psi = ObservableMap("kic", centers.shape[1], centers=centers, sigma=sigma, beta=1.0)
    x, u, xn = snapshots.x, snapshots.u, snapshots.x_next
    if psi.input_dim != x.shape[1] + u.shape[1]:
        raise DimensionError(
            f"KIC centers have dimension {psi.input_dim}, stacked data have {x.shape[1] + u.shape[1]}"
        )
    if mode == "lifted":
        if snapshots.u_next is None:
            raise DimensionError("lifted KIC needs the next input of every snapshot")
        keep = np.all(np.isfinite(snapshots.u_next), axis=1)
        x, u, xn, un = x[keep], u[keep], xn[keep], snapshots.u_next[keep]
    elif mode != "state":
        raise ParameterError(f"unknown KIC mode {mode!r}")
    S = psi.lift(np.hstack([x, u]))
    if S.shape[1] < S.shape[0]:
        warnings.warn(
            f"only {S.shape[1]} samples for {S.shape[0]} KIC features", stacklevel=2
        )
    n_s = S.shape[0]
    if mode == "lifted":
        Y = np.vstack([psi.lift(np.hstack([xn, un])), xn.T])
    else:
        Y = xn.T
    M, info = _solve(Y, S, gamma, method)
    K = M[:n_s] if mode == "lifted" else None
    K_direct = M[n_s:] if mode == "lifted" else M
    resid = float(np.linalg.norm(M[:n_s] @ S - Y[:n_s])) if mode == "lifted" else info.residual
    return KoopmanModel(
        method="kic",
        psi_x=psi,
        K=K,
        K_direct=K_direct,
        diagnostics={
            "residual": resid,
            "rank": info.rank,
            "features": n_s,
            "samples": S.shape[1],
            "gamma": info.gamma,
            "smallest_sv": info.smallest_sv,
            "largest_sv": info.largest_sv,
            "mode": mode,
        },
    )


def fit_output(data: LiftedData, gamma: float = DEFAULT_GAMMA, method: str = "ridge") -> np.ndarray:
    """Output operator ``C = W pinv(Z_X, gamma)``."""
    if data.W is None:
        raise DimensionError("lifted data carry no outputs W")
    try:
        C, _ = solve_operator(data.W, data.Z_X, gamma, method=method)
    except RankError as exc:
        raise RankError(
            f"{exc} -- Z_X must have full row rank for an exact output fit",
            rank=exc.rank,
            required=exc.required,
        ) from None
    return C


def with_output(model: KoopmanModel, data: LiftedData, psi_y: ObservableMap | None = None, gamma: float = DEFAULT_GAMMA) -> KoopmanModel:
    C = fit_output(data, gamma)
    diag = dict(model.diagnostics)
    diag["output_residual"] = float(np.linalg.norm(C @ data.Z_X - data.W))
    return replace(model, C=C, psi_y=psi_y, diagnostics=diag)


# -- propagation -----------------------------------------------------------------

@dataclass(frozen=True)
class Propagation:
    z: np.ndarray  # (H+1, n_z)
    w: np.ndarray | None = None  # (H+1, n_w)


def propagate(model: KoopmanModel, z0, v_sequence) -> Propagation:
    """Iterate ``z_{t+1} = K (z_t kron v_t)`` from ``z0``."""
    if model.K is None:
        raise ParameterError(f"{model.method} model has no lifted operator")
    K = model.K
    z = np.asarray(z0, dtype=float).reshape(-1)
    if model.method == "kic":
        # stacked embedding: the input is part of the lifted state
        steps = len(v_sequence) if np.ndim(v_sequence) else int(v_sequence)
        zs = [z]
        for t in range(steps):
            z = K @ z
            if not np.all(np.isfinite(z)):
                raise DivergenceError(f"propagation diverged at step {t}", step=t)
            zs.append(z)
        return Propagation(z=np.array(zs))
    V = np.atleast_2d(np.asarray(v_sequence, dtype=float))
    if V.shape[0] == 0:
        V = V.reshape(0, model.n_v)
    if z.size != K.shape[0] or V.shape[1] * z.size != K.shape[1]:
        raise DimensionError(
            f"z0 of size {z.size} and inputs of size {V.shape[1]} do not match K {K.shape}"
        )
    zs = np.empty((V.shape[0] + 1, z.size))
    zs[0] = z
    for t, v in enumerate(V):
        zs[t + 1] = K @ kron_vec(zs[t], v)
        if not np.all(np.isfinite(zs[t + 1])):
            raise DivergenceError(f"propagation diverged at step {t}", step=t)
    w = zs @ model.C.T if model.C is not None else None
    return Propagation(z=zs, w=w)


def lift_inputs(model: KoopmanModel, inputs) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=float).reshape(-1, model.psi_u.input_dim)
    return model.psi_u.lift(inputs).T


def lifted_error_surface(model: KoopmanModel, true_traj: Trajectory) -> np.ndarray:
    """Absolute error between propagated and lifted true states.

    Product-space models give an ``(n_z, H+1)`` surface: column ``t`` compares
    the propagation from ``Psi_x(x_0)`` under the true lifted inputs with
    ``Psi_x(x_t)``. For the stacked KIC embedding the lifted state at ``t``
    needs ``u_t``, so the surface covers ``t = 0..H-1``.
    """
    if model.method == "kic":
        S_true = model.psi_x.lift(np.hstack([true_traj.states[:-1], true_traj.inputs])).T
        if S_true.shape[0] == 0:
            return np.zeros((model.psi_x.output_dim, 0))
        prop = propagate(model, S_true[0], S_true.shape[0] - 1)
        return np.abs(prop.z - S_true).T
    Z_true = model.psi_x.lift(true_traj.states).T
    V = lift_inputs(model, true_traj.inputs)
    prop = propagate(model, Z_true[0], V)
    return np.abs(prop.z - Z_true).T


def predict_states(model: KoopmanModel, x0, inputs) -> np.ndarray:
    """Raw-state prediction ``(H+1, n)`` using the model's decoder.

    Lifted models propagate in feature space and decode: with ``K_direct``
    the state ``x_{t+1}`` is read from ``z_t kron v_t`` (from the stacked
    features for KIC), with ``D`` as ``D z_t``. A direct-only model (or
    state-mode KIC) is iterated in raw coordinates, relifting every step.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    inputs = np.asarray(inputs, dtype=float)
    m = model.psi_u.input_dim if model.psi_u is not None else model.psi_x.input_dim - x0.size
    inputs = inputs.reshape(-1, m)
    H = inputs.shape[0]
    xs = np.empty((H + 1, x0.size))
    xs[0] = x0
    if model.method == "kic":
        psi = model.psi_x
        if model.K is not None:
            s = psi(np.concatenate([x0, inputs[0]])) if H else None
            for t in range(H):
                xs[t + 1] = model.K_direct @ s
                s = model.K @ s
        else:
            for t in range(H):
                xs[t + 1] = model.K_direct @ psi(np.concatenate([xs[t], inputs[t]]))
    elif model.K is not None and (model.K_direct is not None or model.D is not None):
        V = lift_inputs(model, inputs)
        Z = propagate(model, model.psi_x(x0), V).z
        if model.K_direct is not None:
            for t in range(H):
                xs[t + 1] = model.K_direct @ kron_vec(Z[t], V[t])
        else:
            xs[1:] = Z[1:] @ model.D.T
    elif model.K_direct is not None:
        for t in range(H):
            zv = kron_vec(model.psi_x(xs[t]), model.psi_u(inputs[t]))
            xs[t + 1] = model.K_direct @ zv
    else:
        raise ParameterError("model has no decoder")
    if not np.all(np.isfinite(xs)):
        bad = int(np.argmax(~np.all(np.isfinite(xs), axis=1)))
        raise DivergenceError(f"state prediction diverged at step {bad - 1}", step=bad - 1)
    return xs


# -- quadrature construction ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """Tensor Gauss-Legendre grid; the first ``n_x`` axes are state axes."""

    nodes: tuple
    weights: tuple
    n_x: int
    lower: np.ndarray
    upper: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.nodes)

    @property
    def n_u(self) -> int:
        return self.dim - self.n_x

    @property
    def size(self) -> int:
        return int(np.prod([len(n) for n in self.nodes]))

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.nodes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    def point_weights(self) -> np.ndarray:
        mesh = np.meshgrid(*self.weights, indexing="ij")
        w = np.ones(mesh[0].size)
        for g in mesh:
            w = w * g.ravel()
        return w

    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))


def gauss_legendre_grid(x_box, u_box=None, nodes_per_axis: int = 32) -> QuadratureGrid:
    xlo, xhi = (np.ravel(np.asarray(b, dtype=float)) for b in x_box)
    lo, hi = xlo, xhi
    if u_box is not None:
        ulo, uhi = (np.ravel(np.asarray(b, dtype=float)) for b in u_box)
        lo, hi = np.concatenate([xlo, ulo]), np.concatenate([xhi, uhi])
    t, w = np.polynomial.legendre.leggauss(nodes_per_axis)
    nodes, weights = [], []
    for a, b in zip(lo, hi):
        nodes.append(0.5 * (b - a) * t + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * w)
    return QuadratureGrid(tuple(nodes), tuple(weights), xlo.size, lo, hi)


def _check_cover(psi, lo, hi, name):
    if getattr(psi, "kind", None) == "legendre":
        if not (np.allclose(psi.box[0], lo) and np.allclose(psi.box[1], hi)):
            raise DimensionError(f"{name}: Legendre box does not match the quadrature box")


def _basis_on_grid(psi, grid: QuadratureGrid) -> np.ndarray:
    P = grid.points()
    if isinstance(psi, tuple):
        psi_x, psi_u = psi
        if psi_x.input_dim != grid.n_x or psi_u.input_dim != grid.n_u:
            raise DimensionError(
                f"product basis of dimension ({psi_x.input_dim}, {psi_u.input_dim}) "
                f"on a grid with ({grid.n_x}, {grid.n_u}) axes"
            )
        _check_cover(psi_x, grid.lower[: grid.n_x], grid.upper[: grid.n_x], "psi_x")
        _check_cover(psi_u, grid.lower[grid.n_x :], grid.upper[grid.n_x :], "psi_u")
        return khatri_rao(psi_x.lift(P[:, : grid.n_x]), psi_u.lift(P[:, grid.n_x :]))
    if psi.input_dim != grid.dim:
        raise DimensionError(
            f"map of input dimension {psi.input_dim} on a {grid.dim}-axis grid"
        )
    _check_cover(psi, grid.lower, grid.upper, "psi")
    return psi.lift(P)


def gram_matrix(psi, grid: QuadratureGrid) -> np.ndarray:
    """Quadrature Gram matrix ``R_ij = <psi_i, psi_j>``.

    ``psi`` is a single map over the whole grid or a ``(psi_x, psi_u)`` pair,
    which stands for the product basis ``psi_x kron psi_u``.
    """
    Phi = _basis_on_grid(psi, grid)
    return (Phi * grid.point_weights()) @ Phi.T


def _check_riesz(R: np.ndarray, name: str):
    lam = scipy.linalg.eigvalsh(R)[::-1]
    s = np.abs(lam)
    rank = numerical_rank(s, R.shape)
    if rank < R.shape[0]:
        raise RankError(
            f"Gram matrix {name} is singular (rank {rank} of {R.shape[0]}); "
            "the observables do not form a Riesz basis on this grid",
            rank=rank,
            required=R.shape[0],
        )


def _eval_map(F, X, U):
    out = np.asarray(F(X, U), dtype=float)
    return out.reshape(X.shape[0], -1)


def projection_matrix(F, psi_x, psi_u, grid: QuadratureGrid) -> np.ndarray:
    """``Q_x[i, j] = <psi_{i,x} o F, psi_j>`` over the product basis."""
    P = grid.points()
    X, U = P[:, : grid.n_x], P[:, grid.n_x :]
    Phi = _basis_on_grid((psi_x, psi_u), grid)
    FX = _eval_map(F, X, U)
    return (psi_x.lift(FX) * grid.point_weights()) @ Phi.T


def analytic_koopman(F, psi_x, psi_u, grid: QuadratureGrid) -> np.ndarray:
    """Truncated operator ``K = Q_x R^{-1}`` with quadrature inner products.

    ``F(X, U)`` must accept arrays of grid points ``(N, n)``, ``(N, m)``.
    """
    if grid.dim > 3:
        warnings.warn("quadrature construction beyond three axes is expensive", stacklevel=2)
    R = gram_matrix((psi_x, psi_u), grid)
    _check_riesz(R, "R")
    Q = projection_matrix(F, psi_x, psi_u, grid)
    return scipy.linalg.solve(R, Q.T, assume_a="sym").T


def analytic_output(h, psi_x, psi_y, grid: QuadratureGrid) -> np.ndarray:
    """Truncated output operator ``C = Q_y R_x^{-1}`` over the state box."""
    if grid.n_u != 0:
        raise DimensionError("output construction integrates over the state box only")
    R_x = gram_matrix(psi_x, grid)
    _check_riesz(R_x, "R_x")
    P = grid.points()
    HX = np.asarray(h(P), dtype=float).reshape(P.shape[0], -1)
    Q_y = (psi_y.lift(HX) * grid.point_weights()) @ psi_x.lift(P).T
    return scipy.linalg.solve(R_x, Q_y.T, assume_a="sym").T
