import numpy as np
import pytest


def real_stacked_lstsq(H, x):
    """Widely-linear LS solved as a real problem in (Re, Im) coordinates.

    Independent of any complex solver: builds the real 2N x 4L design for
    x_hat = H beta + conj(H) alpha and hands it to ``np.linalg.lstsq``.
    """
    H = np.asarray(H, dtype=complex)
    A, B = H.real, H.imag
    # beta = b1 + j b2, alpha = a1 + j a2
    # Re(x_hat) = A b1 - B b2 + A a1 + B a2
    # Im(x_hat) = B b1 + A b2 - B a1 + A a2
    top = np.hstack([A, -B, A, B])
    bot = np.hstack([B, A, -B, A])
    D = np.vstack([top, bot])
    t = np.concatenate([x.real, x.imag])
    sol, *_ = np.linalg.lstsq(D, t, rcond=None)
    L = H.shape[1]
    beta = sol[:L] + 1j * sol[L:2 * L]
    alpha = sol[2 * L:3 * L] + 1j * sol[3 * L:]
    return beta, alpha


def improper_matrix(rng, n, l, rho=0.7):
    """Complex Gaussian matrix with pseudo-covariance controlled by ``rho``."""
    a = rng.standard_normal((n, l))
    b = rng.standard_normal((n, l))
    return a + 1j * (rho * a + np.sqrt(1 - rho ** 2) * b)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
