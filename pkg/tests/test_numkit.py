import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfkalman import numkit
from cfkalman.errors import NotSPD, SingularSystem

from conftest import random_hurwitz, random_psd, random_spd


def test_vec_column_stacking():
    np.testing.assert_array_equal(numkit.vec([[1, 2], [3, 4]]), [1, 3, 2, 4])
    np.testing.assert_array_equal(numkit.vec(np.eye(2)), [1, 0, 0, 1])
    np.testing.assert_array_equal(numkit.vec([[7]]), [7])


@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31))
def test_unvec_inverts_vec(r, c, seed):
    M = np.random.default_rng(seed).standard_normal((r, c))
    np.testing.assert_array_equal(numkit.unvec(numkit.vec(M), r, c), M)


def test_kron_small_cases():
    np.testing.assert_array_equal(numkit.kron(np.eye(2), [[5]]), np.diag([5.0, 5.0]))
    np.testing.assert_array_equal(numkit.kron([[1], [2]], [[3]]), [[3], [6]])


def test_kron_matches_blockwise_definition(rng):
    A = rng.standard_normal((2, 3))
    B = rng.standard_normal((3, 2))
    K = numkit.kron(A, B)
    for i in range(2):
        for j in range(3):
            np.testing.assert_array_equal(K[3 * i:3 * i + 3, 2 * j:2 * j + 2], A[i, j] * B)


def test_vec_of_triple_product(rng):
    A, X, B = (rng.standard_normal((2, 2)) for _ in range(3))
    lhs = numkit.vec(A @ X @ B)
    rhs = numkit.kron(B.T, A) @ numkit.vec(X)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12, rtol=0)


@settings(max_examples=50)
@given(st.integers(0, 2**31))
def test_kron_mixed_product(seed):
    r = np.random.default_rng(seed)
    A, B, C, D = (r.standard_normal((2, 2)) for _ in range(4))
    lhs = numkit.kron(A, B) @ numkit.kron(C, D)
    np.testing.assert_allclose(lhs, numkit.kron(A @ C, B @ D), atol=1e-12, rtol=0)


def test_cholesky_trivial():
    np.testing.assert_array_equal(numkit.cholesky_spd(np.eye(3)), np.eye(3))
    np.testing.assert_array_equal(numkit.cholesky_spd([[4.0]]), [[2.0]])


def test_cholesky_determinant_sign():
    L = numkit.cholesky_spd([[1, 0.999], [0.999, 1]])
    np.testing.assert_allclose(L @ L.T, [[1, 0.999], [0.999, 1]], atol=1e-15)
    with pytest.raises(NotSPD) as info:
        numkit.cholesky_spd([[1, 1.001], [1.001, 1]])
    assert info.value.min_pivot < 0


def test_cholesky_rejects_tiny_pivot_relative_to_scale():
    with pytest.raises(NotSPD):
        numkit.cholesky_spd(np.diag([1e6, 1e-8]))
    numkit.cholesky_spd(np.diag([1e-6, 1e-8]))


def test_solve_spd(rng):
    rhs = rng.standard_normal((3, 2))
    np.testing.assert_array_equal(numkit.solve_spd(np.eye(3), rhs), rhs)
    np.testing.assert_allclose(numkit.solve_spd([[2.0]], [[1.0]]), [[0.5]])


def _adjugate_inverse(M):
    n = M.shape[0]
    cof = np.empty_like(M)
    for i in range(n):
        for j in range(n):
            minor = np.delete(np.delete(M, i, 0), j, 1)
            cof[i, j] = (-1) ** (i + j) * np.linalg.det(minor)
    return cof.T / np.linalg.det(M)


def test_solve_spd_against_adjugate(rng):
    for _ in range(20):
        M = random_spd(rng, 3)
        rhs = rng.standard_normal((3, 2))
        X = numkit.solve_spd(M, rhs)
        np.testing.assert_allclose(X, _adjugate_inverse(M) @ rhs, atol=1e-10, rtol=0)
        assert np.linalg.norm(M @ X - rhs) <= 1e-10 * np.linalg.norm(rhs)


def test_solve_spd_propagates_not_spd():
    with pytest.raises(NotSPD):
        numkit.solve_spd([[-1.0]], [[1.0]])


def test_expm_cases():
    np.testing.assert_array_equal(numkit.expm(np.zeros((2, 2)), 3.0), np.eye(2))
    np.testing.assert_allclose(numkit.expm([[-1.0]], 1.0), [[np.exp(-1.0)]], rtol=1e-14)
    np.testing.assert_allclose(numkit.expm([[0.0, 1.0], [0.0, 0.0]], 1.0), [[1, 1], [0, 1]], atol=1e-15)


def test_expm_against_taylor_series(rng):
    A = rng.standard_normal((3, 3))
    term = np.eye(3)
    total = np.eye(3)
    for k in range(1, 60):
        term = term @ A / k
        total = total + term
    np.testing.assert_allclose(numkit.expm(A, 1.0), total, rtol=1e-12, atol=1e-13)


def test_expm_semigroup(rng):
    for _ in range(10):
        A = random_hurwitz(rng, 3)
        s, t = rng.uniform(0, 2, size=2)
        np.testing.assert_allclose(numkit.expm(A, s) @ numkit.expm(A, t), numkit.expm(A, s + t),
                                   atol=1e-10, rtol=0)


def test_lyapunov_closed_forms():
    np.testing.assert_allclose(numkit.lyapunov_solve([[-1.0]], [[1.0]]), [[0.5]], atol=1e-15)
    np.testing.assert_allclose(numkit.lyapunov_solve(np.diag([-1.0, -2.0]), np.eye(2)),
                               np.diag([0.5, 0.25]), atol=1e-15)
    np.testing.assert_array_equal(numkit.lyapunov_solve(np.diag([-1.0, -2.0]), np.zeros((2, 2))),
                                  np.zeros((2, 2)))


def test_lyapunov_random_properties(rng):
    for n in (1, 2, 3, 4, 6):
        A = random_hurwitz(rng, n)
        Q = random_psd(rng, n, rank=max(1, n - 1))
        P = numkit.lyapunov_solve(A, Q)
        assert numkit.lyapunov_residual(A, P, Q) <= 1e-9
        np.testing.assert_allclose(P, P.T, atol=1e-12, rtol=0)
        assert np.linalg.eigvalsh(P).min() >= -1e-10


def test_lyapunov_rejects_unstable():
    with pytest.raises(SingularSystem):
        numkit.lyapunov_solve([[1.0]], [[1.0]])
    with pytest.raises(SingularSystem):
        numkit.lyapunov_solve([[0.0]], [[1.0]])
