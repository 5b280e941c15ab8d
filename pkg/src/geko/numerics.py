"""Dense linear-algebra kernels: Kronecker/Khatri-Rao products, ridge right
pseudoinverse, Hankel assembly and SVD order reduction.

Data matrices follow the column-per-sample convention (features x time).
Signal sequences are passed time-major, shape ``(length, dim)``.
"""

from __future__ import annotations

import io
import numbers
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DimensionError, ParameterError, ParseError, RankError

RANK_RTOL = 1e-12


def _as_matrix(A, name="matrix") -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {A.shape}")
    return A


def as_sequence(blocks, name="sequence") -> np.ndarray:
    """Coerce a signal to a time-major ``(length, dim)`` array."""
    s = np.asarray(blocks, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    if s.ndim != 2:
        raise DimensionError(f"{name} must be a sequence of vectors, got shape {s.shape}")
    return s


def kron_vec(a, b) -> np.ndarray:
    """Kronecker product of two vectors, entry ``i*len(b) + j`` is ``a[i]*b[j]``."""
    a = np.ravel(np.asarray(a, dtype=float))
    b = np.ravel(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise DimensionError("kron_vec needs two nonempty vectors")
    return np.outer(a, b).ravel()


def khatri_rao(A, B) -> np.ndarray:
    """Column-wise Kronecker product.

    Column ``j`` of the result is ``kron_vec(A[:, j], B[:, j])``.
    """
    A = _as_matrix(A, "A")
    B = _as_matrix(B, "B")
    if A.shape[1] != B.shape[1]:
        raise DimensionError(
            f"khatri_rao needs equal column counts, got {A.shape[1]} and {B.shape[1]}"
        )
    return (A[:, None, :] * B[None, :, :]).reshape(A.shape[0] * B.shape[0], A.shape[1])


def block_khatri_rao(A, B, a_block: int, b_block: int) -> np.ndarray:
    """Block-wise Khatri-Rao product.

    ``A`` and ``B`` are cut into vertical blocks of ``a_block`` and ``b_block``
    rows. In every column, block ``i`` of the result is the Kronecker product of
    block ``i`` of ``A`` with block ``i`` of ``B``.
    """
    A = _as_matrix(A, "A")
    B = _as_matrix(B, "B")
    if a_block < 1 or b_block < 1:
        raise DimensionError("block sizes must be positive")
    if A.shape[0] % a_block or B.shape[0] % b_block:
        raise DimensionError(
            f"row counts {A.shape[0]}, {B.shape[0]} not divisible by blocks {a_block}, {b_block}"
        )
    nblocks = A.shape[0] // a_block
    if B.shape[0] // b_block != nblocks:
        raise DimensionError(
            f"block counts differ: {nblocks} vs {B.shape[0] // b_block}"
        )
    if A.shape[1] != B.shape[1]:
        raise DimensionError(
            f"column counts differ: {A.shape[1]} vs {B.shape[1]}"
        )
    cols = A.shape[1]
    Ab = A.reshape(nblocks, a_block, 1, cols)
    Bb = B.reshape(nblocks, 1, b_block, cols)
    return (Ab * Bb).reshape(nblocks * a_block * b_block, cols)


def rank_tolerance(s: np.ndarray, shape) -> float:
    """Singular values above this count towards the numerical rank."""
    if s.size == 0:
        return 0.0
    return max(shape) * float(s[0]) * RANK_RTOL


def numerical_rank(s: np.ndarray, shape, tol: float | None = None) -> int:
    s = np.asarray(s, dtype=float)
    if tol is None:
        tol = rank_tolerance(s, shape)
    return int(np.count_nonzero(s > tol))


def _check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not np.isfinite(gamma) or gamma < 0:
        raise ParameterError(f"gamma must be a finite non-negative number, got {gamma}")
    return gamma


def _thin_svd(A: np.ndarray):
    return scipy.linalg.svd(A, full_matrices=False, lapack_driver="gesdd")


def ridge_right_pinv(A, gamma: float = 0.0, method: str = "ridge", rcond: float | None = None):
    """Regularized right pseudoinverse ``A^T (A A^T + gamma I)^{-1}``.

    With ``gamma == 0`` the ridge method requires full row rank and returns
    the right Moore-Penrose inverse. ``method="svd"`` instead discards
    singular values below the rank tolerance (or ``rcond * s_max``), which
    handles rank-deficient matrices.
    """
    A = _as_matrix(A, "A")
    gamma = _check_gamma(gamma)
    if method not in ("ridge", "svd"):
        raise ParameterError(f"unknown pseudoinverse method {method!r}")
    U, s, Vt = _thin_svd(A)
    tol = rank_tolerance(s, A.shape) if rcond is None else rcond * (s[0] if s.size else 0.0)
    rank = numerical_rank(s, A.shape, tol)
    if method == "ridge" and gamma == 0.0 and rank < A.shape[0]:
        raise RankError(
            f"matrix of shape {A.shape} has numerical rank {rank} < {A.shape[0]} rows; "
            "the right pseudoinverse needs full row rank (use gamma > 0 or method='svd')",
            rank=rank,
            required=A.shape[0],
        )
    keep = s > tol if method == "svd" else np.ones_like(s, dtype=bool)
    filt = np.zeros_like(s)
    filt[keep] = s[keep] / (s[keep] ** 2 + gamma)
    return (Vt.T * filt) @ U.T


@dataclass(frozen=True)
class SolveInfo:
    residual: float  # ||K A - Y||_F
    rank: int
    smallest_sv: float
    largest_sv: float
    gamma: float
    method: str

    def as_dict(self) -> dict:
        return {
            "residual": self.residual,
            "rank": self.rank,
            "smallest_sv": self.smallest_sv,
            "largest_sv": self.largest_sv,
            "gamma": self.gamma,
            "method": self.method,
        }


def solve_operator(Y, A, gamma: float = 0.0, method: str = "ridge", rcond: float | None = None):
    """Least-squares operator ``K = Y pinv(A, gamma)`` with diagnostics.

    For ``gamma > 0`` the normal equations ``(A A^T + gamma I) K^T = A Y^T``
    are solved by Cholesky, which is much cheaper than an SVD when ``A`` has
    many more columns than rows. Singular values for the diagnostics then come
    from the eigenvalues of ``A A^T``, so values below ``sqrt(eps) * s_max``
    are only approximate.

    Returns
    -------
    K : ndarray, shape (Y.rows, A.rows)
    info : SolveInfo
    """
    A = _as_matrix(A, "A")
    Y = _as_matrix(Y, "Y")
    gamma = _check_gamma(gamma)
    if Y.shape[1] != A.shape[1]:
        raise DimensionError(
            f"Y has {Y.shape[1]} columns but A has {A.shape[1]}"
        )
    if gamma > 0 and method == "ridge":
        G = A @ A.T
        lam = scipy.linalg.eigvalsh(G)[::-1]
        s = np.sqrt(np.clip(lam, 0.0, None))
        G[np.diag_indices_from(G)] += gamma
        rhs = A @ Y.T
        try:
            K = scipy.linalg.cho_solve(scipy.linalg.cho_factor(G, lower=True), rhs).T
        except np.linalg.LinAlgError:
            K = scipy.linalg.solve(G, rhs, assume_a="sym").T
        rank = numerical_rank(s, A.shape)
    else:
        if method not in ("ridge", "svd"):
            raise ParameterError(f"unknown pseudoinverse method {method!r}")
        U, s, Vt = _thin_svd(A)
        tol = rank_tolerance(s, A.shape) if rcond is None else rcond * (s[0] if s.size else 0.0)
        rank = numerical_rank(s, A.shape, tol)
        if method == "ridge" and rank < A.shape[0]:
            raise RankError(
                f"regressor of shape {A.shape} has numerical rank {rank} < {A.shape[0]} rows; "
                "exact least squares needs full row rank (more data or gamma > 0)",
                rank=rank,
                required=A.shape[0],
            )
        keep = s > tol if method == "svd" else np.ones_like(s, dtype=bool)
        filt = np.zeros_like(s)
        filt[keep] = s[keep] / (s[keep] ** 2 + gamma)
        K = ((Y @ Vt.T) * filt) @ U.T
    residual = float(np.linalg.norm(K @ A - Y))
    info = SolveInfo(
        residual=residual,
        rank=rank,
        smallest_sv=float(s[-1]) if s.size else 0.0,
        largest_sv=float(s[0]) if s.size else 0.0,
        gamma=gamma,
        method=method,
    )
    return K, info


def hankel(blocks, depth: int, width: int | None = None) -> np.ndarray:
    """Block Hankel matrix with ``depth`` block rows and ``width + 1`` columns.

    Block ``(i, j)`` is ``s[i + j]``. ``width`` defaults to the largest value
    the sequence supports, ``len(s) - depth``.
    """
    s = as_sequence(blocks)
    length, dim = s.shape
    if depth < 1:
        raise DimensionError("Hankel depth must be >= 1")
    if width is None:
        width = length - depth
    if width < 0 or length < depth + width:
        raise DimensionError(
            f"sequence of length {length} too short for depth {depth} and width {width}"
        )
    idx = np.arange(depth)[:, None] + np.arange(width + 1)[None, :]
    # (depth, cols, dim) -> (depth*dim, cols)
    return s[idx].transpose(0, 2, 1).reshape(depth * dim, width + 1)


@dataclass(frozen=True)
class SvdResult:
    U: np.ndarray
    s: np.ndarray
    Vt: np.ndarray
    rank: int
    order: int

    @property
    def U_r(self):
        return self.U[:, : self.order]

    @property
    def s_r(self):
        return self.s[: self.order]

    @property
    def Vt_r(self):
        return self.Vt[: self.order]

    def reconstruct(self) -> np.ndarray:
        return (self.U_r * self.s_r) @ self.Vt_r

    def truncation_error(self) -> float:
        """Frobenius norm of the discarded modes (the reconstruction error)."""
        return float(np.sqrt(np.sum(self.s[self.order :] ** 2)))


def svd_reduce(M, order):
    """Truncate ``M`` to ``order`` singular modes.

    ``order`` is either an integer mode count or a float energy fraction in
    (0, 1]; for a fraction the smallest ``r`` with
    ``sum(s[:r]**2) >= order * sum(s**2)`` is kept.

    Returns the ``SvdResult`` and the reduced data ``diag(s_r) Vt_r``.
    """
    M = _as_matrix(M, "M")
    U, s, Vt = _thin_svd(M)
    kmax = s.size
    if isinstance(order, numbers.Integral) and not isinstance(order, bool):
        r = int(order)
        if not 1 <= r <= kmax:
            raise DimensionError(f"order {r} outside [1, {kmax}]")
    else:
        frac = float(order)
        if not 0.0 < frac <= 1.0:
            raise DimensionError(f"energy fraction {frac} outside (0, 1]")
        energy = np.cumsum(s**2)
        total = energy[-1]
        if total == 0.0:
            r = 1
        else:
            r = int(np.searchsorted(energy, frac * total * (1 - 1e-15))) + 1
            r = min(max(r, 1), kmax)
    result = SvdResult(U=U, s=s, Vt=Vt, rank=numerical_rank(s, M.shape), order=r)
    return result, s[:r, None] * Vt[:r]


def format_matrix_csv(A) -> str:
    """One row per line, 17 significant digits, '.' decimal point."""
    A = _as_matrix(A)
    out = io.StringIO()
    for row in A:
        out.write(",".join(format(float(v), ".17g") for v in row))
        out.write("\n")
    return out.getvalue()


def parse_matrix_csv(text: str, source: str = "<string>") -> np.ndarray:
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            rows.append([float(tok) for tok in line.split(",")])
        except ValueError as exc:
            raise ParseError(f"{source}:{lineno}: cannot parse number ({exc})", line=lineno) from None
        if len(rows[-1]) != len(rows[0]):
            raise ParseError(
                f"{source}:{lineno}: expected {len(rows[0])} fields, got {len(rows[-1])}",
                line=lineno,
            )
    if not rows:
        return np.zeros((0, 0))
    return np.array(rows, dtype=float)


def write_matrix_csv(path, A, header: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        fh.write(format_matrix_csv(A))


def read_matrix_csv(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        return parse_matrix_csv(fh.read(), source=str(path))
