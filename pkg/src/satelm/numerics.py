"""Complex least-squares solvers for the output layer of the ELM receivers.

Two routes produce the widely-linear weights ``(beta, alpha)`` that map the
hidden-layer matrix ``H`` and its conjugate onto a target ``x``::

    x_hat = H @ beta + conj(H) @ alpha

* :func:`augmented_pinv_solve` applies the Moore-Penrose inverse to the
  augmented matrix ``[H, conj(H)]``.
* :func:`wlls_solve` works from the second-order statistics
  ``C = H^H H``, ``P = H^T H``, ``r = H^H x`` and ``s = H^T x`` and solves the
  normal equations::

      C beta + conj(P) alpha = r
      P beta + conj(C) alpha = s

  by eliminating ``beta`` (Schur complement of ``C``). Only ``L x L`` systems
  are factorised, which is where the FLOP savings come from.

With full column rank both routes give the same answer.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla


class SingularSystemError(np.linalg.LinAlgError):
    """Raised when a block of the widely-linear normal equations is singular.

    Attributes
    ----------
    block : str
        ``"C"`` for the regularised autocorrelation matrix, ``"schur"`` for
        the Schur complement ``conj(C) - P C^-1 conj(P)``.
    """

    def __init__(self, block: str, message: str | None = None):
        self.block = block
        super().__init__(message or f"singular {block} block in widely-linear normal equations")


def _as_matrix(a, name: str) -> np.ndarray:
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def _as_vector(v, name: str) -> np.ndarray:
    x = np.asarray(v, dtype=complex)
    if x.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")
    return x


@dataclass(frozen=True)
class SecondOrderStats:
    """Instantaneous (unnormalised) second-order statistics of ``(H, x)``."""

    C: np.ndarray
    P: np.ndarray
    r: np.ndarray
    s: np.ndarray
    n_samples: int

    @property
    def L(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class WidelyLinearWeights:
    """Output weights of the strictly-linear (``beta``) and conjugate (``alpha``) branches."""

    beta: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        if self.beta.shape != self.alpha.shape:
            raise ValueError(f"beta {self.beta.shape} and alpha {self.alpha.shape} differ in shape")

    @property
    def augmented(self) -> np.ndarray:
        """Stacked ``[beta; alpha]``."""
        return np.concatenate([self.beta, self.alpha])

    @classmethod
    def from_augmented(cls, w: np.ndarray) -> "WidelyLinearWeights":
        w = np.asarray(w, dtype=complex)
        if w.shape[0] % 2:
            raise ValueError("augmented weight vector must have even length")
        half = w.shape[0] // 2
        return cls(beta=w[:half].copy(), alpha=w[half:].copy())


def compute_stats(H, x) -> SecondOrderStats:
    """Return ``C = H^H H``, ``P = H^T H``, ``r = H^H x``, ``s = H^T x``."""
    H = _as_matrix(H, "H")
    x = _as_vector(x, "x")
    if x.shape[0] != H.shape[0]:
        raise ValueError(f"x has {x.shape[0]} samples but H has {H.shape[0]} rows")
    Hh = H.conj().T
    C = Hh @ H
    # symmetrise away round-off so the Hermitian / symmetric invariants hold exactly
    C = 0.5 * (C + C.conj().T)
    P = H.T @ H
    P = 0.5 * (P + P.T)
    return SecondOrderStats(C=C, P=P, r=Hh @ x, s=H.T @ x, n_samples=H.shape[0])


def _factor(A: np.ndarray, block: str, scale: float):
    """Factorise a Hermitian PSD block; Cholesky first, LU as fallback.

    Pivots at or below ``n * eps * scale`` count as singular. Returns a
    callable solving ``A X = B``.
    """
    tol = A.shape[0] * np.finfo(float).eps * scale
    try:
        cf = sla.cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        cf = None
    if cf is not None:
        if np.min(np.abs(np.diag(cf[0]))) ** 2 <= tol:
            raise SingularSystemError(block)
        return lambda B: sla.cho_solve(cf, B, check_finite=False)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(A, check_finite=False)
    if np.min(np.abs(np.diag(lu))) <= tol:
        raise SingularSystemError(block)
    return lambda B: sla.lu_solve((lu, piv), B, check_finite=False)


def wlls_solve(stats: SecondOrderStats, ridge: float = 0.0) -> WidelyLinearWeights:
    """Widely-linear least squares via block elimination.

    Solves ``C beta + conj(P) alpha = r`` and ``P beta + conj(C) alpha = s``
    with ``C`` replaced by ``C + ridge*I``::

        alpha = (conj(C) - P C^-1 conj(P))^-1 (s - P C^-1 r)
        beta  = C^-1 (r - conj(P) alpha)

    Raises
    ------
    SingularSystemError
        If the regularised ``C`` or its Schur complement cannot be factorised.
    """
    if not np.isfinite(ridge) or ridge < 0:
        raise ValueError(f"ridge must be a finite non-negative number, got {ridge}")
    L = stats.L
    eye = np.eye(L)
    C = stats.C + ridge * eye
    Cc = stats.C.conj() + ridge * eye
    P = stats.P
    Pc = P.conj()

    scale = max(float(np.max(np.abs(np.diag(C)))), np.finfo(float).tiny)
    solve_C = _factor(C, "C", scale)
    CinvPc = solve_C(Pc)
    Cinv_r = solve_C(stats.r)
    schur = Cc - P @ CinvPc
    schur = 0.5 * (schur + schur.conj().T)
    solve_schur = _factor(schur, "schur", scale)
    alpha = solve_schur(stats.s - P @ Cinv_r)
    beta = Cinv_r - CinvPc @ alpha
    if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(beta))):
        raise SingularSystemError("schur", "non-finite widely-linear weights")
    return WidelyLinearWeights(beta=beta, alpha=alpha)


def default_ridge(stats: SecondOrderStats) -> float:
    """Fallback regulariser ``1e-10 * trace(C) / L`` for ill-conditioned pilots."""
    return 1e-10 * float(np.real(np.trace(stats.C))) / stats.L


def pseudo_inverse(M) -> np.ndarray:
    """Moore-Penrose inverse from the SVD.

    Singular values below ``max(rows, cols) * eps * sigma_max`` are treated
    as zero.
    """
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix contains non-finite entries")
    if M.size == 0:
        return np.zeros(M.shape[::-1], dtype=complex)
    U, sv, Vh = np.linalg.svd(M, full_matrices=False)
    tol = max(M.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
    keep = sv > tol
    inv = np.zeros_like(sv)
    inv[keep] = 1.0 / sv[keep]
    return (Vh.conj().T * inv) @ U.conj().T


def augment(H) -> np.ndarray:
    """``[H, conj(H)]``."""
    H = np.asarray(H, dtype=complex)
    return np.hstack([H, H.conj()])


def augmented_pinv_solve(H, x) -> WidelyLinearWeights:
    """Minimum-norm least-squares weights ``pinv([H, conj(H)]) @ x``."""
    H = _as_matrix(H, "H")
    x = _as_vector(x, "x")
    if x.shape[0] != H.shape[0]:
        raise ValueError(f"x has {x.shape[0]} samples but H has {H.shape[0]} rows")
    return WidelyLinearWeights.from_augmented(pseudo_inverse(augment(H)) @ x)


def predict(H, w: WidelyLinearWeights) -> np.ndarray:
    """``H @ beta + conj(H) @ alpha``."""
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[1] != w.beta.shape[0]:
        raise ValueError(f"H shape {H.shape} incompatible with {w.beta.shape[0]} weights")
    return H @ w.beta + H.conj() @ w.alpha
