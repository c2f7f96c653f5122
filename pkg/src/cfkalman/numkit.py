"""Dense linear algebra helpers and vec/Kronecker calculus.

Matrices are plain 2-D ``numpy`` float arrays and vectors 1-D arrays.
``vec`` stacks columns, so that ``vec(A X B) == kron(B.T, A) @ vec(X)``.
"""

import numpy as np
import scipy.linalg

from .errors import NotSPD, SingularSystem

SPD_RTOL = 1e-12
# reciprocal condition number below which the Kronecker Lyapunov system is rejected
_LYAP_RCOND = 1e-13


def as_matrix(M, name="matrix"):
    """Return ``M`` as a finite 2-D float array (scalars become 1x1)."""
    A = np.array(M, dtype=float)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    elif A.ndim == 1:
        A = A.reshape(-1, 1)
    if A.ndim != 2 or A.size == 0:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    return A


def as_vector(v, name="vector"):
    x = np.array(v, dtype=float).reshape(-1)
    if x.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} has non-finite entries")
    return x


def vec(M):
    """Column-stacking: entry ``M[i, j]`` lands at index ``i + j * rows``."""
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        return M.copy()
    return M.reshape(-1, order="F").copy()


def unvec(v, rows, cols=None):
    cols = rows if cols is None else cols
    return np.asarray(v, dtype=float).reshape((rows, cols), order="F").copy()


def kron(A, B):
    """Kronecker product; block ``(i, j)`` of the result is ``A[i, j] * B``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    pr, pc = A.shape
    br, bc = B.shape
    # out[i, k, j, l] = A[i, j] * B[k, l]
    out = A[:, None, :, None] * B[None, :, None, :]
    return out.reshape(pr * br, pc * bc)


def symmetrize(P):
    return 0.5 * (P + P.T)


def cholesky_spd(M, rtol=SPD_RTOL):
    """Lower-triangular Cholesky factor of a symmetric positive definite matrix.

    A pivot below ``rtol * max(diag(M))`` raises :class:`NotSPD` carrying the
    offending pivot, so the acceptance threshold scales with the matrix.
    """
    M = as_matrix(M)
    n = M.shape[0]
    if M.shape[1] != n:
        raise ValueError(f"cholesky_spd needs a square matrix, got {M.shape}")
    tol = rtol * max(float(np.max(np.diag(M))), 0.0)
    L = np.zeros_like(M)
    for j in range(n):
        pivot = M[j, j] - L[j, :j] @ L[j, :j]
        if not pivot > tol:
            raise NotSPD(pivot)
        L[j, j] = np.sqrt(pivot)
        if j + 1 < n:
            L[j + 1:, j] = (M[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def solve_spd(M, rhs):
    """Solve ``M X = rhs`` for SPD ``M`` through its Cholesky factor."""
    L = cholesky_spd(M)
    rhs = np.asarray(rhs, dtype=float)
    y = scipy.linalg.solve_triangular(L, rhs, lower=True)
    return scipy.linalg.solve_triangular(L.T, y, lower=False)


def expm(A, t=1.0):
    """Matrix exponential ``exp(A t)`` (Pade scaling and squaring)."""
    A = as_matrix(A)
    return scipy.linalg.expm(A * float(t))


def is_hurwitz(A):
    return bool(np.max(np.linalg.eigvals(np.asarray(A, dtype=float)).real) < 0.0)


def lyapunov_operator(A):
    """``I (x) A + A (x) I``: maps ``vec(P)`` to ``vec(A P + P A^T)``."""
    A = as_matrix(A)
    eye = np.eye(A.shape[0])
    return kron(eye, A) + kron(A, eye)


def lyapunov_solve(A, Q):
    """Solve ``A P + P A^T + Q = 0`` as the dense n^2 x n^2 Kronecker system.

    Raises :class:`SingularSystem` when ``A`` is not Hurwitz or the system is
    numerically singular.
    """
    A = as_matrix(A, "A")
    Q = as_matrix(Q, "Q")
    n = A.shape[0]
    if A.shape != (n, n) or Q.shape != (n, n):
        raise ValueError("lyapunov_solve needs square A and Q of equal size")
    if not is_hurwitz(A):
        raise SingularSystem("A is not Hurwitz; the stationary Lyapunov equation has no PSD solution")
    K = lyapunov_operator(A)
    if 1.0 / np.linalg.cond(K) < _LYAP_RCOND:
        raise SingularSystem("Kronecker Lyapunov system is numerically singular")
    P = unvec(np.linalg.solve(K, -vec(Q)), n)
    return symmetrize(P)


def lyapunov_residual(A, P, Q):
    return float(np.linalg.norm(A @ P + P @ A.T + Q))
