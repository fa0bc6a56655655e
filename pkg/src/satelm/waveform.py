"""QAM mapping and DFT-spread OFDM framing."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class QamConstellation:
    """Gray-mapped square QAM with unit average energy.

    Point ``k`` carries the bit label equal to the binary expansion of ``k``
    (MSB first). The mapping follows the 3GPP NR tables: for 4-QAM
    ``[(1-2b0) + j(1-2b1)]/sqrt(2)``, for 16-QAM
    ``[(1-2b0)(2-(1-2b2)) + j(1-2b1)(2-(1-2b3))]/sqrt(10)``.
    """

    order: int
    points: np.ndarray = field(repr=False)
    bit_labels: np.ndarray = field(repr=False)

    @property
    def bits_per_symbol(self) -> int:
        return int(np.log2(self.order))


@lru_cache(maxsize=None)
def qam_constellation(order: int = 4) -> QamConstellation:
    if order not in (4, 16):
        raise ValueError(f"unsupported QAM order {order}; expected 4 or 16")
    k = int(np.log2(order))
    labels = ((np.arange(order)[:, None] >> np.arange(k - 1, -1, -1)) & 1).astype(np.int8)
    s = 1 - 2 * labels.astype(float)
    if order == 4:
        pts = (s[:, 0] + 1j * s[:, 1]) / np.sqrt(2)
    else:
        pts = (s[:, 0] * (2 - s[:, 2]) + 1j * s[:, 1] * (2 - s[:, 3])) / np.sqrt(10)
    pts.setflags(write=False)
    labels.setflags(write=False)
    return QamConstellation(order=order, points=pts, bit_labels=labels)


def qam_map(bits, constellation: QamConstellation) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.int8).ravel()
    k = constellation.bits_per_symbol
    if bits.size % k:
        raise ValueError(f"{bits.size} bits is not a multiple of {k} bits per symbol")
    idx = bits.reshape(-1, k) @ (1 << np.arange(k - 1, -1, -1))
    return constellation.points[idx]


def qam_demap(symbols, constellation: QamConstellation) -> np.ndarray:
    """Hard minimum-distance decisions; ties go to the lowest point index."""
    y = np.asarray(symbols, dtype=complex).ravel()
    d = np.abs(y[:, None] - constellation.points[None, :])
    return constellation.bit_labels[np.argmin(d, axis=1)].ravel()


@dataclass(frozen=True)
class OfdmParams:
    n_fft: int = 1024
    subcarrier_spacing_hz: float = 15e3
    n_cp: int = 72
    n_occupied: int | None = None

    def __post_init__(self):
        if self.n_occupied is None:
            object.__setattr__(self, "n_occupied", self.n_fft)
        if not 0 <= self.n_cp < self.n_fft:
            raise ValueError("n_cp must satisfy 0 <= n_cp < n_fft")
        if not 1 <= self.n_occupied <= self.n_fft:
            raise ValueError("n_occupied must satisfy 1 <= n_occupied <= n_fft")

    @property
    def sample_rate(self) -> float:
        return self.n_fft * self.subcarrier_spacing_hz

    @property
    def symbol_length(self) -> int:
        return self.n_fft + self.n_cp

    @property
    def subcarriers(self) -> np.ndarray:
        # natural order starting at bin 0
        return np.arange(self.n_occupied)


def dfts_ofdm_modulate(qam, params: OfdmParams) -> np.ndarray:
    """DFT spreading, subcarrier mapping, IFFT and cyclic prefix.

    Both transforms are unitary, so energy is preserved and a fully loaded
    symbol body equals the input sequence.
    """
    qam = np.asarray(qam, dtype=complex)
    if qam.shape != (params.n_occupied,):
        raise ValueError(f"expected {params.n_occupied} QAM symbols, got shape {qam.shape}")
    grid = np.zeros(params.n_fft, dtype=complex)
    grid[params.subcarriers] = np.fft.fft(qam, norm="ortho")
    body = np.fft.ifft(grid, norm="ortho")
    return np.concatenate([body[params.n_fft - params.n_cp:], body])


def ofdm_to_subcarriers(sig, params: OfdmParams) -> np.ndarray:
    """Strip the CP and return the occupied subcarrier values."""
    sig = np.asarray(sig, dtype=complex)
    if sig.shape[0] < params.symbol_length:
        raise ValueError(f"symbol has {sig.shape[0]} samples, need {params.symbol_length}")
    body = sig[params.n_cp:params.symbol_length]
    return np.fft.fft(body, norm="ortho")[params.subcarriers]


def despread(subcarrier_values, params: OfdmParams) -> np.ndarray:
    return np.fft.ifft(np.asarray(subcarrier_values, dtype=complex), norm="ortho")


def dfts_ofdm_demodulate(sig, params: OfdmParams) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`dfts_ofdm_modulate`.

    Returns ``(subcarrier_values, despread_symbols)``. Samples past
    ``n_fft + n_cp`` (a channel tail) are ignored.
    """
    freq = ofdm_to_subcarriers(sig, params)
    return freq, despread(freq, params)


def body_to_symbols(body, params: OfdmParams) -> np.ndarray:
    """Run a time-domain symbol body through the receive transforms."""
    body = np.asarray(body, dtype=complex)
    if body.shape != (params.n_fft,):
        raise ValueError(f"expected body of {params.n_fft} samples, got {body.shape}")
    return despread(np.fft.fft(body, norm="ortho")[params.subcarriers], params)


def generate_pilot(seed: int, constellation: QamConstellation, params: OfdmParams):
    """Pseudo-random QAM pilot block and its modulated symbol."""
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, params.n_occupied * constellation.bits_per_symbol, dtype=np.int8)
    qam = qam_map(bits, constellation)
    return qam, dfts_ofdm_modulate(qam, params)


@dataclass(frozen=True)
class Frame:
    """One pilot symbol followed by data symbols, all with CP."""

    pilot_symbol: np.ndarray
    data_symbols: tuple
    pilot_qam: np.ndarray
    tx_bits: np.ndarray
    sample_rate: float

    @property
    def symbols(self) -> list:
        return [self.pilot_symbol, *self.data_symbols]

    def replace_symbols(self, symbols) -> "Frame":
        symbols = list(symbols)
        return Frame(
            pilot_symbol=symbols[0],
            data_symbols=tuple(symbols[1:]),
            pilot_qam=self.pilot_qam,
            tx_bits=self.tx_bits,
            sample_rate=self.sample_rate,
        )


def build_frame(rng: np.random.Generator, constellation: QamConstellation, params: OfdmParams,
                n_data_symbols: int = 13) -> Frame:
    """Draw a pilot and ``n_data_symbols`` of random data from ``rng``."""
    pilot_qam, pilot_symbol = generate_pilot(int(rng.integers(2 ** 63)), constellation, params)
    k = constellation.bits_per_symbol
    tx_bits = rng.integers(0, 2, n_data_symbols * params.n_occupied * k, dtype=np.int8)
    qam = qam_map(tx_bits, constellation).reshape(n_data_symbols, params.n_occupied)
    data = tuple(dfts_ofdm_modulate(q, params) for q in qam)
    return Frame(pilot_symbol=pilot_symbol, data_symbols=data, pilot_qam=pilot_qam,
                 tx_bits=tx_bits, sample_rate=params.sample_rate)
