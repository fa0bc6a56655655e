"""Pilot-trained receivers: LS/MMSE one-tap baselines and the ELM family.

The ELM receivers learn a map from a short window of received samples to
the transmitted time-domain symbol body, using the pilot symbol as the
training set. They differ only in how the output weights are solved:

========== ===================================================== ==========
variant    features                                              solver
========== ===================================================== ==========
ELM        real hidden layer on (Re, Im) of the taps              pinv
CELM       complex hidden layer ``H``                             pinv
CELMAH     ``[H, conj(H)]``                                       pinv
CELM_WLLS  ``[H, conj(H)]``                                       block WLLS
========== ===================================================== ==========
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.linalg import solve_toeplitz

from .numerics import (
    WidelyLinearWeights,
    augmented_pinv_solve,
    compute_stats,
    predict,
    pseudo_inverse,
    wlls_solve,
)
from .waveform import OfdmParams

log = logging.getLogger(__name__)


class Variant(str, enum.Enum):
    ELM = "ELM"
    CELM = "CELM"
    CELMAH = "CELMAH"
    CELM_WLLS = "CELM_WLLS"


ACTIVATIONS = {"asinh": np.arcsinh}


# --------------------------------------------------------------------------
# tap-delay input and hidden layer
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TapDelayMatrix:
    Z: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.Z.shape[0]

    @property
    def n_taps(self) -> int:
        return self.Z.shape[1]


def build_tap_matrix(y, N: int, I: int) -> TapDelayMatrix:
    """Column ``i`` (1-based) is ``y[1+I-i .. N+I-i]``: tap ``i`` lags by ``i-1`` samples."""
    y = np.asarray(y, dtype=complex)
    if I < 1 or N < 1:
        raise ValueError("N and I must be positive")
    if y.shape[0] < N + I - 1:
        raise ValueError(f"need at least {N + I - 1} samples, got {y.shape[0]}")
    win = sliding_window_view(y, I)[:N]
    return TapDelayMatrix(np.ascontiguousarray(win[:, ::-1]))


def rx_window(rx_symbol, params: OfdmParams, I: int) -> np.ndarray:
    """Received samples feeding the tap matrix of one symbol body.

    The body starts after the CP; the ``I - 1`` samples before it supply
    the delayed taps of the first rows.
    """
    if I - 1 > params.n_cp:
        raise ValueError(f"{I} taps need more history than the {params.n_cp}-sample CP")
    start = params.n_cp - (I - 1)
    return np.asarray(rx_symbol, dtype=complex)[start:params.n_cp + params.n_fft]


def hidden_layer(Z, W, b, activation: str = "asinh") -> np.ndarray:
    """``H[k, p] = g(sum_i W[p, i] Z[k, i] + b[p])`` (unconjugated inner product)."""
    Z = Z.Z if isinstance(Z, TapDelayMatrix) else np.asarray(Z)
    W = np.asarray(W)
    b = np.asarray(b)
    if W.ndim != 2 or W.shape[1] != Z.shape[1] or b.shape != (W.shape[0],):
        raise ValueError(f"W {W.shape} / b {b.shape} incompatible with Z {Z.shape}")
    try:
        g = ACTIVATIONS[activation]
    except KeyError:
        raise ValueError(f"unknown activation {activation!r}") from None
    with np.errstate(all="ignore"):
        H = g(Z @ W.T + b)
    if not np.all(np.isfinite(H)):
        raise FloatingPointError("hidden layer produced non-finite values")
    return H


def augment_hidden(H) -> np.ndarray:
    H = np.asarray(H)
    return np.hstack([H, H.conj()])


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainedNetwork:
    """Input layer ``(W, b)`` plus the solved output weights.

    Complex variants keep ``weights``; plain CELM has ``alpha == 0``. The
    real ELM keeps a real ``L x 2`` ``real_weights`` matrix (Re and Im
    outputs) and its ``W`` acts on ``[Re z, Im z]``.
    """

    variant: Variant
    W: np.ndarray
    b: np.ndarray
    weights: WidelyLinearWeights | None
    real_weights: np.ndarray | None = None
    activation: str = "asinh"
    theta: float = 1.0
    seed: int = 0
    ridge: float = 0.0

    @property
    def L(self) -> int:
        return self.W.shape[0]

    @property
    def n_taps(self) -> int:
        return self.W.shape[1] // 2 if self.variant is Variant.ELM else self.W.shape[1]

    def to_json(self) -> str:
        def c(a):
            a = np.asarray(a)
            return [[float(v.real), float(v.imag)] for v in a.ravel()]

        rec = {
            "variant": self.variant.value,
            "L": self.L,
            "n_taps": self.n_taps,
            "theta": self.theta,
            "seed": self.seed,
            "ridge": self.ridge,
            "activation": self.activation,
            "W_shape": list(self.W.shape),
            "W": c(self.W),
            "b": c(self.b),
        }
        if self.weights is not None:
            rec["beta"] = c(self.weights.beta)
            rec["alpha"] = c(self.weights.alpha)
        if self.real_weights is not None:
            rec["real_weights"] = self.real_weights.tolist()
        return json.dumps(rec, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "TrainedNetwork":
        rec = json.loads(text)
        variant = Variant(rec["variant"])

        def c(pairs, shape=None, real=False):
            a = np.array([complex(re, im) for re, im in pairs])
            if real:
                a = np.ascontiguousarray(a.real)
            return a.reshape(shape) if shape else a

        real = variant is Variant.ELM
        weights = None
        if "beta" in rec:
            weights = WidelyLinearWeights(c(rec["beta"]), c(rec["alpha"]))
        rw = np.array(rec["real_weights"]) if "real_weights" in rec else None
        return cls(variant=variant, W=c(rec["W"], rec["W_shape"], real), b=c(rec["b"], real=real),
                   weights=weights, real_weights=rw, activation=rec["activation"],
                   theta=rec["theta"], seed=rec["seed"], ridge=rec["ridge"])


def init_input_layer(L: int, n_inputs: int, theta: float, rng: np.random.Generator, real: bool = False):
    """Zero-mean uniform weights and biases with total variance ``theta``.

    Complex draws split the variance evenly between real and imaginary
    parts, each uniform on ``[-sqrt(3 theta / 2), +sqrt(3 theta / 2)]``.
    """
    if real:
        a = np.sqrt(3 * theta)
        return rng.uniform(-a, a, (L, n_inputs)), rng.uniform(-a, a, L)
    a = np.sqrt(1.5 * theta)
    W = rng.uniform(-a, a, (L, n_inputs)) + 1j * rng.uniform(-a, a, (L, n_inputs))
    b = rng.uniform(-a, a, L) + 1j * rng.uniform(-a, a, L)
    return W, b


def _real_features(Z) -> np.ndarray:
    return np.hstack([Z.real, Z.imag])


def train(Z, x_pilot, variant, L: int = 6, seed: int = 0, theta: float = 1.0,
          ridge: float = 0.0, activation: str = "asinh") -> TrainedNetwork:
    """Draw the random input layer from ``seed`` and solve the output weights.

    Raises
    ------
    SingularSystemError
        CELM_WLLS with a degenerate pilot (retry with a positive ``ridge``).
    """
    variant = Variant(variant)
    Z = Z.Z if isinstance(Z, TapDelayMatrix) else np.asarray(Z, dtype=complex)
    x = np.asarray(x_pilot, dtype=complex)
    if x.shape != (Z.shape[0],):
        raise ValueError(f"pilot target has shape {x.shape}, expected ({Z.shape[0]},)")
    if L < 1:
        raise ValueError("L must be positive")
    rng = np.random.default_rng(seed)
    common = dict(variant=variant, activation=activation, theta=theta, seed=seed, ridge=ridge)

    if variant is Variant.ELM:
        Zr = _real_features(Z)
        W, b = init_input_layer(L, Zr.shape[1], theta, rng, real=True)
        Hr = hidden_layer(Zr, W, b, activation)
        out = np.ascontiguousarray((pseudo_inverse(Hr) @ np.column_stack([x.real, x.imag])).real)
        return TrainedNetwork(W=W, b=b, weights=None, real_weights=out, **common)

    W, b = init_input_layer(L, Z.shape[1], theta, rng)
    H = hidden_layer(Z, W, b, activation)
    if variant is Variant.CELM:
        w = WidelyLinearWeights(pseudo_inverse(H) @ x, np.zeros(L, dtype=complex))
    elif variant is Variant.CELMAH:
        w = augmented_pinv_solve(H, x)
    else:
        w = wlls_solve(compute_stats(H, x), ridge=ridge)
    return TrainedNetwork(W=W, b=b, weights=w, **common)


def apply_network(Z, net: TrainedNetwork) -> np.ndarray:
    Z = Z.Z if isinstance(Z, TapDelayMatrix) else np.asarray(Z, dtype=complex)
    if net.variant is Variant.ELM:
        out = hidden_layer(_real_features(Z), net.W, net.b, net.activation) @ net.real_weights
        return out[:, 0] + 1j * out[:, 1]
    return predict(hidden_layer(Z, net.W, net.b, net.activation), net.weights)


def equalize_ml(y_data, net: TrainedNetwork, N: int, I: int) -> np.ndarray:
    """Time-domain estimate of a transmitted symbol body from its received window."""
    if I != net.n_taps:
        raise ValueError(f"network expects {net.n_taps} taps, got I={I}")
    return apply_network(build_tap_matrix(y_data, N, I), net)


# --------------------------------------------------------------------------
# one-tap baselines
# --------------------------------------------------------------------------

LS_CLAMP = 1e-12


@dataclass(frozen=True)
class ChannelEstimate:
    H_f: np.ndarray
    noise_var: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.H_f)):
            raise ValueError("channel estimate has non-finite entries")
        if self.noise_var < 0:
            raise ValueError("noise variance must be non-negative")


def ls_channel_estimate(rx_pilot_subcarriers, tx_pilot_subcarriers, noise_var: float = 0.0,
                        n_taps: int | None = None) -> ChannelEstimate:
    """Least-squares channel estimate from one pilot symbol.

    Without ``n_taps`` this is the per-subcarrier ratio ``Y / X``. With
    ``n_taps`` the estimate is the frequency response of the length-``n_taps``
    impulse response minimising ``sum |Y - X H|^2`` (a delay-domain
    constrained LS fit). The constrained form matters for DFT-spread pilots,
    whose subcarrier amplitudes are nearly Gaussian: occasional deep nulls in
    ``X`` make the raw ratio arbitrarily noisy.
    """
    Y = np.asarray(rx_pilot_subcarriers, dtype=complex)
    X = np.asarray(tx_pilot_subcarriers, dtype=complex)
    if Y.shape != X.shape:
        raise ValueError(f"pilot length mismatch: {Y.shape} vs {X.shape}")
    n = Y.shape[0]
    if n_taps is None:
        if np.any(np.abs(X) == 0):
            raise ValueError("transmitted pilot has a zero subcarrier")
        return ChannelEstimate(H_f=Y / X, noise_var=noise_var)
    if not 1 <= n_taps <= n:
        raise ValueError(f"n_taps must lie in [1, {n}]")
    # normal equations (F_L^H |X|^2 F_L) h = F_L^H X^* Y are Toeplitz
    col = n * np.fft.ifft(np.abs(X) ** 2)[:n_taps]
    rhs = n * np.fft.ifft(X.conj() * Y)[:n_taps]
    if col[0].real <= 0:
        raise ValueError("transmitted pilot is all zero")
    h = solve_toeplitz((col, col.conj()), rhs)
    return ChannelEstimate(H_f=np.fft.fft(h, n), noise_var=noise_var)


def equalize_ls(rx_subcarriers, est: ChannelEstimate) -> np.ndarray:
    """Zero forcing ``Y / H``; near-zero gains are clamped to ``1e-12``."""
    H = est.H_f
    small = np.abs(H) < LS_CLAMP
    if small.any():
        log.warning("LS equalizer clamped %d near-zero channel gains", int(small.sum()))
        H = np.where(small, LS_CLAMP, H)
    return np.asarray(rx_subcarriers, dtype=complex) / H


def equalize_mmse(rx_subcarriers, est: ChannelEstimate) -> np.ndarray:
    """``conj(H) Y / (|H|^2 + sigma^2)``."""
    H = est.H_f
    return H.conj() * np.asarray(rx_subcarriers, dtype=complex) / (np.abs(H) ** 2 + est.noise_var)
