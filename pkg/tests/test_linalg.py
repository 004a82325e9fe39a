import numpy as np
import pytest

from aedcompress.linalg import SvdConvergenceError, least_squares_project, svd
from oracles import gauss_solve, sym_eigvals_power


def check_svd(a, res):
    k = min(a.shape)
    assert res.u.shape == (a.shape[0], k) and res.v.shape == (a.shape[1], k)
    assert np.all(np.diff(res.sigma) <= 0) and np.all(res.sigma >= 0)
    assert np.max(np.abs(res.u.T @ res.u - np.eye(k))) <= 1e-10
    assert np.max(np.abs(res.v.T @ res.v - np.eye(k))) <= 1e-10
    scale = max(1.0, np.max(np.abs(a)))
    assert np.max(np.abs((res.u * res.sigma) @ res.v.T - a)) <= 1e-8 * scale


def test_identity():
    res = svd(np.eye(3))
    np.testing.assert_array_equal(res.sigma, [1.0, 1.0, 1.0])
    np.testing.assert_allclose(res.u @ res.v.T, np.eye(3), atol=1e-15)


def test_diagonal_sorted():
    res = svd(np.diag([3.0, 4.0]))
    np.testing.assert_allclose(res.sigma, [4.0, 3.0], rtol=0, atol=1e-15)


def test_seeded_7x5_reconstruction():
    a = np.random.default_rng(7).standard_normal((7, 5))
    res = svd(a)
    check_svd(a, res)
    assert np.max(np.abs((res.u * res.sigma) @ res.v.T - a)) <= 1e-9


@pytest.mark.parametrize("shape", [(1, 1), (3, 2), (2, 5), (4, 4)])
def test_zero_matrix(shape):
    res = svd(np.zeros(shape))
    assert np.all(res.sigma == 0)
    check_svd(np.zeros(shape), res)


def test_one_by_one_negative():
    res = svd(np.array([[-2.5]]))
    assert res.sigma[0] == 2.5
    assert res.v[0, 0] == 1.0 and res.u[0, 0] == -1.0


def test_rank_deficient():
    a = np.outer([1.0, 2.0, 3.0, 4.0], [1.0, -1.0, 2.0])
    res = svd(a)
    check_svd(a, res)
    assert res.sigma[1] <= 1e-14 * res.sigma[0]


def test_sign_convention_and_determinism():
    a = np.random.default_rng(3).standard_normal((9, 6))
    r1, r2 = svd(a), svd(a.copy())
    for arr1, arr2 in ((r1.u, r2.u), (r1.sigma, r2.sigma), (r1.v, r2.v)):
        assert arr1.tobytes() == arr2.tobytes()
    idx = np.argmax(np.abs(r1.v), axis=0)
    assert np.all(r1.v[idx, np.arange(r1.v.shape[1])] > 0)


def test_sign_convention_wide():
    a = np.random.default_rng(4).standard_normal((3, 8))
    res = svd(a)
    check_svd(a, res)
    idx = np.argmax(np.abs(res.v), axis=0)
    assert np.all(res.v[idx, np.arange(3)] > 0)


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        svd(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        svd(np.array([[1.0, np.nan]]))


def test_nonconvergence_names_dimensions():
    a = np.random.default_rng(0).standard_normal((6, 4))
    with pytest.raises(SvdConvergenceError, match="6x4"):
        svd(a, max_sweeps=1)


def test_reconstruction_200_random_matrices():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        m, n = rng.integers(1, 33, size=2)
        a = rng.standard_normal((m, n)) * 10 ** rng.uniform(-3, 3)
        check_svd(a, svd(a))


def test_singular_values_match_power_iteration_eigenvalues():
    rng = np.random.default_rng(11)
    for _ in range(30):
        m, n = rng.integers(1, 9, size=2)
        a = rng.standard_normal((m, n))
        k = min(m, n)
        eig = sym_eigvals_power(a.T @ a if n <= m else a @ a.T)[:k]
        expected = np.sqrt(np.maximum(eig, 0))
        got = svd(a).sigma
        np.testing.assert_allclose(got, expected, rtol=1e-6, atol=1e-9 * expected[0])


def test_matmul_plumbing():
    rng = np.random.default_rng(5)
    a, b, c = (rng.standard_normal((3, 3)) for _ in range(3))
    np.testing.assert_array_equal(np.eye(3) @ a, a)
    np.testing.assert_array_equal(a @ np.zeros((3, 3)), np.zeros((3, 3)))
    assert np.max(np.abs((a @ b) @ c - a @ (b @ c))) <= 1e-12


class TestLeastSquaresProject:
    def test_coordinate_basis(self):
        w = np.random.default_rng(0).standard_normal((5, 4))
        v = np.eye(4)[:, :2]
        np.testing.assert_array_equal(least_squares_project(w, v), w[:, :2])

    def test_rank_one_alignment(self):
        q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((4, 3)))
        u = np.array([1.0, -2.0, 0.5])
        z = least_squares_project(np.outer(u, q[:, 0]), q)
        np.testing.assert_allclose(z[:, 0], u, atol=1e-14)
        np.testing.assert_allclose(z[:, 1:], 0.0, atol=1e-14)

    def test_matches_normal_equations(self):
        rng = np.random.default_rng(42)
        w = rng.standard_normal((6, 4))
        v = svd(rng.standard_normal((4, 4))).v[:, :2]
        z = least_squares_project(w, v)
        # Z (V^T V) = W V  <=>  (V^T V) Z^T = V^T W^T
        expected = gauss_solve(v.T @ v, v.T @ w.T).T
        assert np.max(np.abs(z - expected)) <= 1e-10

    def test_residual_orthogonal(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            w = rng.standard_normal((8, 6))
            v = svd(rng.standard_normal((6, 6))).v[:, : rng.integers(1, 7)]
            z = least_squares_project(w, v)
            assert np.max(np.abs((z @ v.T - w) @ v)) <= 1e-8

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            least_squares_project(np.zeros((3, 4)), np.eye(5)[:, :2])

    def test_non_orthonormal_basis(self):
        with pytest.raises(ValueError):
            least_squares_project(np.zeros((3, 2)), np.array([[1.0, 1.0], [0.0, 1.0]]))
