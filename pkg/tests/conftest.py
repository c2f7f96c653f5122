import numpy as np
import pytest

_ACCEPTANCE = []


def random_spd(rng, n, scale=1.0, floor=0.1):
    M = rng.standard_normal((n, n))
    return scale * (M @ M.T / n + floor * np.eye(n))


def random_psd(rng, n, rank=None):
    rank = n if rank is None else rank
    M = rng.standard_normal((n, rank))
    return M @ M.T


def random_hurwitz(rng, n, lo=0.5, hi=3.0):
    """Random real matrix whose eigenvalues have real parts in [-hi, -lo]."""
    while True:
        M = rng.standard_normal((n, n))
        lam = np.linalg.eigvals(M).real
        # shift the spectrum into the requested band, keep the non-normal structure
        spread = lam.max() - lam.min()
        if spread > 0:
            M = M * ((hi - lo) / spread)
            lam = np.linalg.eigvals(M).real
        A = M - (lam.max() + lo) * np.eye(n)
        re = np.linalg.eigvals(A).real
        if re.max() <= -lo + 1e-9 and re.min() >= -hi - 1e-9:
            return A


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE:
        terminalreporter.write_line(line)


def pbh_margin(A, C):
    """Smallest singular value of ``[A - lam I; C]`` over eigenvalues with ``Re lam >= 0``.

    Zero means an undetectable unstable mode; ``inf`` means ``A`` is stable.
    Applied to ``(A^T, G^T)`` it measures stabilizability instead.
    """
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    out = np.inf
    for lam in np.linalg.eigvals(A):
        if lam.real >= 0.0:
            M = np.vstack([A - lam * np.eye(A.shape[0]), C.astype(complex)])
            out = min(out, np.linalg.svd(M, compute_uv=False)[-1])
    return out
