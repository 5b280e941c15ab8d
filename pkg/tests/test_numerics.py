import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geko.errors import DimensionError, ParameterError, ParseError, RankError
from geko.numerics import (
    block_khatri_rao,
    format_matrix_csv,
    hankel,
    khatri_rao,
    kron_vec,
    numerical_rank,
    parse_matrix_csv,
    read_matrix_csv,
    ridge_right_pinv,
    solve_operator,
    svd_reduce,
    write_matrix_csv,
)

from .strategies import gaussian, seeds, small


# -- kron_vec ---------------------------------------------------------------

def test_kron_vec_symbolic_layout():
    a1, a2, b1, b2 = 2.0, 3.0, 5.0, 7.0
    assert np.array_equal(kron_vec([a1, a2], [b1, b2]), [a1 * b1, a1 * b2, a2 * b1, a2 * b2])


def test_kron_vec_small_instance():
    assert np.array_equal(kron_vec([1, 2], [3, 4]), [3, 4, 6, 8])


def test_kron_vec_unit_factor_is_identity(rng):
    a = rng.standard_normal(7)
    assert np.array_equal(kron_vec(a, [1.0]), a)


@pytest.mark.parametrize("a,b", [([], [1.0]), ([1.0], [])])
def test_kron_vec_rejects_empty(a, b):
    with pytest.raises(DimensionError):
        kron_vec(a, b)


@given(seeds, small, small)
def test_kron_vec_entry_formula(seed, n, m):
    a, b = gaussian(seed, n), gaussian(seed + 1, m)
    out = kron_vec(a, b)
    assert out.size == n * m
    for i in range(n):
        for j in range(m):
            assert out[i * m + j] == a[i] * b[j]


# -- Khatri-Rao -------------------------------------------------------------

def test_khatri_rao_identity_with_ones():
    out = khatri_rao(np.eye(2), np.ones((2, 2)))
    assert np.array_equal(out[:, 0], [1, 1, 0, 0])
    assert np.array_equal(out[:, 1], [0, 0, 1, 1])


def test_khatri_rao_ones_row_is_identity(rng):
    A = rng.standard_normal((3, 5))
    assert np.array_equal(khatri_rao(A, np.ones((1, 5))), A)


def test_khatri_rao_brute_force(rng):
    A, B = rng.standard_normal((3, 4)), rng.standard_normal((2, 4))
    ref = np.zeros((6, 4))
    for i in range(3):
        for k in range(2):
            for j in range(4):
                ref[i * 2 + k, j] = A[i, j] * B[k, j]
    assert np.array_equal(khatri_rao(A, B), ref)


def test_khatri_rao_column_mismatch():
    with pytest.raises(DimensionError):
        khatri_rao(np.ones((2, 3)), np.ones((2, 4)))


@given(seeds, small, small, small)
def test_khatri_rao_columns_are_kron(seed, ra, rb, c):
    A, B = gaussian(seed, ra, c), gaussian(seed + 7, rb, c)
    KR = khatri_rao(A, B)
    assert KR.shape == (ra * rb, c)
    for j in range(c):
        assert np.array_equal(KR[:, j], kron_vec(A[:, j], B[:, j]))


def test_khatri_rao_can_lose_rank():
    # generic full-row-rank factors: the product has full row rank
    A = np.array([[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]])
    B = np.array([[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0]])
    assert np.linalg.matrix_rank(A) == 2 and np.linalg.matrix_rank(B) == 2
    assert np.linalg.matrix_rank(khatri_rao(A, B)) == 4
    # a common zero pattern makes the product rank-deficient although each factor is full rank
    A2 = np.array([[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0]])
    KR = khatri_rao(A2, B)
    assert np.linalg.matrix_rank(A2) == 2
    assert np.linalg.matrix_rank(KR) == 2 < KR.shape[0]


# -- block Khatri-Rao -------------------------------------------------------------

def test_block_khatri_rao_single_block(rng):
    A, B = rng.standard_normal((4, 6)), rng.standard_normal((3, 6))
    assert np.array_equal(block_khatri_rao(A, B, 4, 3), khatri_rao(A, B))


def test_block_khatri_rao_unit_blocks_of_ones(rng):
    A = rng.standard_normal((6, 5))
    assert np.array_equal(block_khatri_rao(A, np.ones((3, 5)), 2, 1), A)


def test_block_khatri_rao_scalar_hankel_direct():
    z = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    v = np.array([0.5, -1.0, 2.0, 0.25, 3.0])
    F = block_khatri_rao(hankel(z, 2, 3), hankel(v, 2, 3), 1, 1)
    ref = np.array([[z[j] * v[j] for j in range(4)], [z[j + 1] * v[j + 1] for j in range(4)]])
    assert np.array_equal(F, ref)


@pytest.mark.parametrize(
    "shapes,blocks",
    [(((5, 3), (4, 3)), (2, 2)), (((4, 3), (4, 3)), (2, 1)), (((4, 3), (4, 2)), (2, 2))],
)
def test_block_khatri_rao_rejects_bad_blocks(shapes, blocks):
    with pytest.raises(DimensionError):
        block_khatri_rao(np.ones(shapes[0]), np.ones(shapes[1]), *blocks)


@given(seeds, st.integers(1, 4), st.integers(1, 3), st.integers(1, 3), st.integers(0, 6))
def test_block_khatri_rao_matches_window_assembly(seed, N, n_z, n_v, T):
    z, v = gaussian(seed, N + T, n_z), gaussian(seed + 3, N + T, n_v)
    F = block_khatri_rao(hankel(z, N, T), hankel(v, N, T), n_z, n_v)
    direct = np.column_stack(
        [np.concatenate([kron_vec(z[j + i], v[j + i]) for i in range(N)]) for j in range(T + 1)]
    )
    assert np.array_equal(F, direct)


# -- ridge pseudoinverse ---------------------------------------------------------

def test_pinv_identity():
    assert np.allclose(ridge_right_pinv(np.eye(4)), np.eye(4), atol=1e-15)


def test_pinv_scalars():
    assert ridge_right_pinv([[2.0]])[0, 0] == pytest.approx(0.5, abs=1e-15)
    assert ridge_right_pinv([[1.0]], gamma=1.0)[0, 0] == pytest.approx(0.5, abs=1e-15)


def test_pinv_rank_deficient_names_rank():
    A = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]])
    with pytest.raises(RankError, match="rank 1") as exc:
        ridge_right_pinv(A, 0.0)
    assert exc.value.rank == 1 and exc.value.required == 2
    # the truncated mode handles it
    P = ridge_right_pinv(A, 0.0, method="svd")
    assert np.allclose(P, np.linalg.pinv(A), atol=1e-12)


def test_pinv_rejects_negative_gamma():
    with pytest.raises(ParameterError):
        ridge_right_pinv(np.eye(2), -1.0)


def test_pinv_matches_normal_equations(rng):
    A = rng.standard_normal((4, 9))
    gamma = 0.3
    ref = A.T @ np.linalg.inv(A @ A.T + gamma * np.eye(4))
    assert np.allclose(ridge_right_pinv(A, gamma), ref, atol=1e-12)


@given(seeds, st.integers(1, 6), st.integers(0, 6))
def test_pinv_right_inverse(seed, r, extra):
    A = gaussian(seed, r, r + extra) + 3 * np.eye(r, r + extra)
    assert np.allclose(A @ ridge_right_pinv(A, 0.0), np.eye(r), atol=1e-8)


@given(seeds, st.integers(1, 5), st.integers(0, 5))
def test_pinv_continuous_in_gamma(seed, r, extra):
    A = gaussian(seed, r, r + extra) + 3 * np.eye(r, r + extra)
    P0 = ridge_right_pinv(A, 0.0)
    gaps = [np.linalg.norm(ridge_right_pinv(A, g) - P0) for g in (1e-2, 1e-6, 1e-12)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-8


# -- solve_operator ---------------------------------------------------------------------

def test_solve_operator_recovers_operator(rng):
    K = rng.standard_normal((3, 5))
    A = rng.standard_normal((5, 40))
    est, info = solve_operator(K @ A, A, 0.0)
    assert np.linalg.norm(est - K) / np.linalg.norm(K) <= 1e-10
    assert info.residual < 1e-10 and info.rank == 5


def test_solve_operator_identity_on_row_space(rng):
    A = rng.standard_normal((4, 12))
    est, _ = solve_operator(A, A, 0.0)
    assert np.allclose(est, np.eye(4), atol=1e-10)


def test_solve_operator_square_matches_solve(rng):
    A = rng.standard_normal((5, 5)) + 5 * np.eye(5)
    Y = rng.standard_normal((2, 5))
    est, _ = solve_operator(Y, A, 0.0)
    assert np.allclose(est, np.linalg.solve(A.T, Y.T).T, atol=1e-12)


def test_solve_operator_ridge_agrees_with_svd_path(rng):
    A, Y = rng.standard_normal((6, 30)), rng.standard_normal((2, 30))
    fast, info = solve_operator(Y, A, 1e-3)
    ref = Y @ ridge_right_pinv(A, 1e-3)
    assert np.allclose(fast, ref, atol=1e-11)
    assert info.residual == pytest.approx(np.linalg.norm(fast @ A - Y), rel=1e-12)


def test_solve_operator_column_mismatch():
    with pytest.raises(DimensionError):
        solve_operator(np.ones((2, 3)), np.ones((2, 4)))


# -- Hankel ----------------------------------------------------------------------------

def test_hankel_scalar_example():
    H = hankel([0.0, 1.0, 2.0, 3.0], 2, 2)
    assert np.array_equal(H, [[0, 1, 2], [1, 2, 3]])


def test_hankel_depth_one_is_sequence(rng):
    s = rng.standard_normal((6, 2))
    assert np.array_equal(hankel(s, 1), s.T)


def test_hankel_vector_entries(rng):
    s = rng.standard_normal((7, 2))
    H = hankel(s, 3, 4)
    assert H.shape == (6, 5)
    for i in range(3):
        for j in range(5):
            assert np.array_equal(H[2 * i : 2 * i + 2, j], s[i + j])


def test_hankel_too_short():
    with pytest.raises(DimensionError):
        hankel(np.zeros(4), 3, 2)


@given(seeds, st.integers(2, 5), st.integers(1, 3), st.integers(1, 6))
def test_hankel_shift_property(seed, N, d, T):
    H = hankel(gaussian(seed, N + T, d), N, T)
    for j in range(T):
        assert np.array_equal(H[d:, j], H[: (N - 1) * d, j + 1])


# -- SVD reduction -----------------------------------------------------------------------

def test_svd_reduce_rank_one_exact(rng):
    M = np.outer(rng.standard_normal(5), rng.standard_normal(4))
    svd, Z = svd_reduce(M, 1)
    assert Z.shape == (1, 4)
    assert np.allclose(svd.reconstruct(), M, atol=1e-12)


def test_svd_reduce_full_order(rng):
    M = rng.standard_normal((5, 8))
    svd, _ = svd_reduce(M, 5)
    assert np.linalg.norm(svd.reconstruct() - M) <= 1e-9 * np.linalg.norm(M)


def test_svd_reduce_energy_fraction():
    svd, Z = svd_reduce(np.diag([3.0, 2.0, 1.0]), 0.9)
    assert svd.order == 2 and Z.shape == (2, 3)


@pytest.mark.parametrize("order", [0, 4, 0.0, 1.5])
def test_svd_reduce_out_of_range(order):
    with pytest.raises(DimensionError):
        svd_reduce(np.eye(3), order)


@given(seeds, st.integers(1, 6), st.integers(1, 6), st.data())
def test_svd_factors_and_truncation_error(seed, r, c, data):
    M = gaussian(seed, r, c)
    k = data.draw(st.integers(1, min(r, c)))
    svd, Z = svd_reduce(M, k)
    s = svd.s
    assert np.all(s >= 0) and np.all(np.diff(s) <= 0)
    assert np.allclose(svd.U.T @ svd.U, np.eye(svd.U.shape[1]), atol=1e-10)
    assert np.allclose(svd.Vt @ svd.Vt.T, np.eye(svd.Vt.shape[0]), atol=1e-10)
    err = np.linalg.norm(svd.reconstruct() - M)
    assert err == pytest.approx(np.sqrt(np.sum(s[k:] ** 2)), abs=1e-10)
    assert svd.truncation_error() == pytest.approx(err, abs=1e-10)
    assert np.allclose(Z, np.diag(s[:k]) @ svd.Vt[:k], atol=1e-12)


def test_numerical_rank_tolerance():
    s = np.array([1.0, 1e-3, 1e-14])
    assert numerical_rank(s, (3, 3)) == 2


# -- CSV ------------------------------------------------------------------------------

@given(seeds, small, small)
def test_matrix_csv_round_trip_bit_exact(seed, r, c):
    A = gaussian(seed, r, c) * 10.0 ** np.random.default_rng(seed).integers(-300, 300, (r, c))
    assert np.array_equal(parse_matrix_csv(format_matrix_csv(A)), A)


def test_matrix_csv_file_and_errors(tmp_path):
    A = np.array([[1.0, -2.5], [np.pi, 1e-300]])
    p = tmp_path / "m.csv"
    write_matrix_csv(p, A, header="config_hash=abc")
    assert p.read_text().startswith("# config_hash=abc\n")
    assert np.array_equal(read_matrix_csv(p), A)
    with pytest.raises(ParseError, match=":3:") as exc:
        parse_matrix_csv("1,2\n3,4\n5,x\n")
    assert exc.value.line == 3
    with pytest.raises(ParseError, match=":2:"):
        parse_matrix_csv("1,2\n3\n")
