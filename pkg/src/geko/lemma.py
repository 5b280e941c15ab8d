"""Data-based multi-step representation on lifted trajectories.

``F_N(T)`` stacks depth-``N`` windows of ``z_t kron v_t`` as columns
``j = 0..T``; ``F_N^w(T)`` appends the output windows ``w_{j+1..j+N}``.
A query window is represented as ``F_N g`` and its outputs predicted as
``W_N g``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, RankError
from .numerics import (
    as_sequence,
    block_khatri_rao,
    hankel,
    kron_vec,
    numerical_rank,
    rank_tolerance,
    ridge_right_pinv,
    solve_operator,
    svd_reduce,
)


@dataclass(frozen=True, eq=False)
class LemmaData:
    F: np.ndarray  # (N*n_z*n_v, T+1)
    F_w: np.ndarray  # (N*(n_z*n_v + n_w), T+1)
    N: int
    T: int
    n_z: int
    n_v: int
    n_w: int
    raw_output: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def block(self) -> int:
        return self.n_z * self.n_v

    @property
    def W(self) -> np.ndarray:
        """Output block of ``F_w``."""
        return self.F_w[self.F.shape[0] :]

    def manifest(self) -> dict:
        return {
            "N": self.N,
            "T": self.T,
            "n_z": self.n_z,
            "n_v": self.n_v,
            "n_w": self.n_w,
            "raw_output": self.raw_output,
            "diagnostics": self.diagnostics,
        }


@dataclass(frozen=True, eq=False)
class WindowQuery:
    """Lifted window ``col(z_t kron v_t, ..., z_{t+N-1} kron v_{t+N-1})``."""

    zv: np.ndarray
    N: int

    @classmethod
    def from_lifted(cls, z, v, t: int, N: int) -> "WindowQuery":
        z = as_sequence(z, "z")
        v = as_sequence(v, "v")
        if t < 0 or t + N > min(z.shape[0], v.shape[0]):
            raise DimensionError(f"window [{t}, {t + N - 1}] outside the lifted sequences")
        zv = np.concatenate([kron_vec(z[t + i], v[t + i]) for i in range(N)])
        return cls(zv=zv, N=N)


def _svd_diagnostics(F: np.ndarray, tol: float | None = None) -> dict:
    s = np.linalg.svd(F, compute_uv=False)
    tol = rank_tolerance(s, F.shape) if tol is None else tol
    rank = numerical_rank(s, F.shape, tol)
    smallest = float(s[F.shape[0] - 1]) if s.size >= F.shape[0] else 0.0
    return {
        "rank": rank,
        "rows": F.shape[0],
        "full_row_rank": rank == F.shape[0],
        "smallest_sv": smallest,
        "largest_sv": float(s[0]) if s.size else 0.0,
        "condition": float(s[0] / smallest) if smallest > 0 else float("inf"),
    }


def build_lemma_data(z, v, w_next, N: int, T: int | None = None, raw_output: bool = False, check: bool = True) -> LemmaData:
    """Assemble ``F_N(T)`` and ``F_N^w(T)``.

    Parameters
    ----------
    z, v : array_like, shape (>= T+N, n_z) / (>= T+N, n_v)
        Lifted states ``z_0..`` and lifted inputs ``v_0..``.
    w_next : array_like, shape (>= T+N, n_w)
        Row ``k`` holds ``w_{k+1}``. Pass raw outputs here for the
        decoder-free variant (``raw_output=True`` only records it).
    N : int
        Window depth.
    T : int, optional
        Last column index; defaults to the longest the data allow.
    check : bool
        Also assemble ``F_N`` entrywise from the windows and compare.
    """
    z = as_sequence(z, "z")
    v = as_sequence(v, "v")
    w_next = as_sequence(w_next, "w_next")
    if N < 1:
        raise DimensionError("window depth N must be >= 1")
    L = min(z.shape[0], v.shape[0], w_next.shape[0])
    if T is None:
        T = L - N
    if T < 0 or L < T + N:
        raise DimensionError(f"need at least T+N = {T + N} samples, got {L}")
    n_z, n_v, n_w = z.shape[1], v.shape[1], w_next.shape[1]
    F = block_khatri_rao(hankel(z, N, T), hankel(v, N, T), n_z, n_v)
    if check:
        direct = np.column_stack(
            [WindowQuery.from_lifted(z, v, j, N).zv for j in range(T + 1)]
        )
        if not np.array_equal(direct, F):
            raise AssertionError("block Khatri-Rao assembly disagrees with direct assembly")
    F_w = np.vstack([F, hankel(w_next, N, T)])
    return LemmaData(
        F=F,
        F_w=F_w,
        N=N,
        T=T,
        n_z=n_z,
        n_v=n_v,
        n_w=n_w,
        raw_output=raw_output,
        diagnostics=_svd_diagnostics(F),
    )


@dataclass(frozen=True)
class PEReport:
    full_row_rank: bool
    smallest_sv: float
    rank: int
    rows: int
    condition: float


def pe_check(data: LemmaData, tolerance: float | None = None) -> PEReport:
    """N-step persistency of excitation: does ``F_N(T)`` have full row rank?

    ``tolerance`` is an absolute singular-value threshold; the default is the
    package rank convention ``max(shape) * s_max * 1e-12``.
    """
    d = _svd_diagnostics(data.F, tolerance)
    return PEReport(d["full_row_rank"], d["smallest_sv"], d["rank"], d["rows"], d["condition"])


def _query_vector(data: LemmaData, query) -> np.ndarray:
    q = query.zv if isinstance(query, WindowQuery) else np.asarray(query, dtype=float).reshape(-1)
    if q.size != data.F.shape[0]:
        raise DimensionError(f"query has length {q.size}, F_N has {data.F.shape[0]} rows")
    return q


def solve_g(data: LemmaData, query, gamma: float = 0.0, method: str = "ridge", reduce_energy: float | None = None):
    """Least-squares ``g = pinv(F_N, gamma) query``.

    ``method="svd"`` uses the truncated pseudoinverse (rank-deficient data);
    ``reduce_energy`` first projects the rows of ``F_N`` onto the leading
    left singular vectors holding that energy fraction.

    Returns ``(g, residual)`` with ``residual = |F_N g - query|``.
    """
    q = _query_vector(data, query)
    F = data.F
    Fs, qs = F, q
    if reduce_energy is not None:
        svd, Fs = svd_reduce(F, float(reduce_energy))
        qs = svd.U_r.T @ q
    try:
        P = ridge_right_pinv(Fs, gamma, method=method)
    except RankError as exc:
        raise RankError(
            f"{exc} -- F_N(T) lacks full row rank, so the N-step persistency of excitation "
            "(finite Rouche-Capelli) condition fails",
            rank=exc.rank,
            required=exc.required,
        ) from None
    g = P @ qs
    residual = float(np.linalg.norm(F @ g - q))
    return g, residual


def predict_outputs(data: LemmaData, query, gamma: float = 0.0, method: str = "ridge", reduce_energy: float | None = None):
    """Predicted output window ``w*_{t+1..t+N}`` as an ``(N, n_w)`` array."""
    g, _ = solve_g(data, query, gamma, method, reduce_energy)
    return (data.W @ g).reshape(data.N, data.n_w)


def output_map(data: LemmaData, gamma: float = 0.0, method: str = "ridge") -> np.ndarray:
    """The composite map ``W_N pinv(F_N)`` acting on query windows.

    Solved with the same routine as the operator fit, so for ``N = 1`` and
    outputs ``Psi_x(x_{t+1})`` it coincides with the Khatri-Rao EDMD operator.
    """
    M, _ = solve_operator(data.W, data.F, gamma, method=method)
    return M


@dataclass(frozen=True)
class ConsistencyReport:
    max_discrepancy: float
    fro_discrepancy: float
    bound: float
    within_bound: bool


def verify_lemma_consistency(data: LemmaData, model) -> ConsistencyReport:
    """Compare the output block with ``blockdiag(CK, ..., CK) F_N``.

    Every output column block is ``C z_{j+i+1}``; a model with fit residual
    ``r`` on these samples predicts each block up to ``|C|_2 r`` (plus the
    output fit residual), so the whole block is within ``N`` times that. Without an output operator ``C`` the
    outputs are taken to be the lifted states (``C = I``).
    """
    K = model.K
    C = model.C if model.C is not None else np.eye(K.shape[0])
    if C.shape[0] != data.n_w or K.shape[1] != data.block:
        raise DimensionError("model dimensions do not match the lemma data")
    CK = C @ K
    F3 = data.F.reshape(data.N, data.block, -1)
    pred = np.einsum("ab,ibj->iaj", CK, F3).reshape(data.N * data.n_w, -1)
    diff = data.W - pred
    residual = float(model.diagnostics.get("residual", 0.0))
    out_residual = float(model.diagnostics.get("output_residual", 0.0)) if model.C is not None else 0.0
    bound = data.N * (float(np.linalg.norm(C, 2)) * residual + out_residual)
    fro = float(np.linalg.norm(diff))
    return ConsistencyReport(
        max_discrepancy=float(np.max(np.abs(diff))) if diff.size else 0.0,
        fro_discrepancy=fro,
        bound=bound,
        within_bound=fro <= bound + 1e-9 * max(1.0, float(np.linalg.norm(data.W))),
    )
