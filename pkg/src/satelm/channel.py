"""Satellite downlink impairment chain.

Stages, in the order :func:`propagate` applies them::

    [ideal pre-distortion] -> HPA -> TDL multipath + Doppler
        -> residual frequency offset -> I/Q imbalance & phase noise -> AWGN

Every stage works on complex baseband numpy arrays. Stochastic stages take
an explicit ``numpy.random.Generator`` so a run is a pure function of its seed.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .waveform import Frame

SPEED_OF_LIGHT = 299_792_458.0
EARTH_RADIUS_M = 6_371e3
EARTH_MU = 3.986004418e14


# --------------------------------------------------------------------------
# HPA
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SalehHpa:
    """Memoryless Saleh TWTA model with input back-off.

    ``T(A) = alpha_a A / (1 + beta_a A^2)``,
    ``phi(A) = alpha_phi A^2 / (1 + beta_phi A^2)``.
    """

    alpha_a: float = 2.1587
    beta_a: float = 1.1517
    alpha_phi: float = 4.0033
    beta_phi: float = 9.1040
    ibo_db: float = 0.0

    def __post_init__(self):
        if self.beta_a <= 0 or self.alpha_a <= 0:
            raise ValueError("Saleh AM/AM parameters must be positive")
        if self.ibo_db < 0:
            raise ValueError("ibo_db must be non-negative")

    @property
    def input_scale(self) -> float:
        return 10 ** (-self.ibo_db / 20)

    @property
    def saturation_input(self) -> float:
        return 1 / np.sqrt(self.beta_a)

    @property
    def max_output(self) -> float:
        return self.alpha_a / (2 * np.sqrt(self.beta_a))

    def am_am(self, a):
        return self.alpha_a * a / (1 + self.beta_a * a ** 2)

    def am_pm(self, a):
        return self.alpha_phi * a ** 2 / (1 + self.beta_phi * a ** 2)

    def inverse_am_am(self, out):
        """Smaller root of ``T(a) = out`` on the rising branch, ``out <= max_output``."""
        out = np.asarray(out, dtype=float)
        disc = np.maximum(self.alpha_a ** 2 - 4 * self.beta_a * out ** 2, 0.0)
        # alpha - sqrt(disc) loses precision for small out; use the conjugate form
        return 2 * out / (self.alpha_a + np.sqrt(disc))


@dataclass(frozen=True)
class LutHpa:
    """Measured AM/AM and AM/PM curves interpolated from a table.

    The table has columns (input amplitude, output amplitude, output phase
    shift in radians), sorted by input amplitude.
    """

    input_amplitude: tuple
    output_amplitude: tuple
    phase_shift: tuple
    ibo_db: float = 0.0

    @classmethod
    def from_file(cls, path, ibo_db: float = 0.0) -> "LutHpa":
        path = Path(path)
        try:
            tab = np.loadtxt(path, ndmin=2)
        except (OSError, ValueError) as exc:
            raise ValueError(f"{path}: cannot read HPA table ({exc})") from exc
        if tab.shape[1] != 3 or tab.shape[0] < 2:
            raise ValueError(f"{path}: expected at least two rows of 3 columns, got {tab.shape}")
        if np.any(np.diff(tab[:, 0]) <= 0):
            raise ValueError(f"{path}: input amplitudes must be strictly increasing")
        return cls(tuple(tab[:, 0]), tuple(tab[:, 1]), tuple(tab[:, 2]), ibo_db)

    @property
    def input_scale(self) -> float:
        return 10 ** (-self.ibo_db / 20)

    @property
    def _peak(self) -> int:
        return int(np.argmax(self.output_amplitude))

    @property
    def saturation_input(self) -> float:
        return self.input_amplitude[self._peak]

    @property
    def max_output(self) -> float:
        return self.output_amplitude[self._peak]

    def am_am(self, a):
        return np.interp(a, self.input_amplitude, self.output_amplitude)

    def am_pm(self, a):
        return np.interp(a, self.input_amplitude, self.phase_shift)

    def inverse_am_am(self, out):
        k = self._peak + 1
        return np.interp(out, self.output_amplitude[:k], self.input_amplitude[:k])


def hpa_apply(sig, model) -> np.ndarray:
    """``A e^{j theta} -> T(sA) e^{j(theta + phi(sA))}`` with ``s`` the back-off scale."""
    x = np.asarray(sig, dtype=complex)
    a = np.abs(x) * model.input_scale
    return model.am_am(a) * np.exp(1j * (np.angle(x) + model.am_pm(a)))


def ideal_predistort(sig, model) -> np.ndarray:
    """Pre-distorter that makes ``hpa_apply`` a unit-gain linear amplifier.

    The back-off is undone as well, so ``hpa_apply(ideal_predistort(x)) == x``
    whenever ``|x| <= model.max_output``. Larger samples clip to the
    saturation point.
    """
    x = np.asarray(sig, dtype=complex)
    target = np.minimum(np.abs(x), model.max_output)
    a_in = np.minimum(model.inverse_am_am(target), model.saturation_input)
    return a_in / model.input_scale * np.exp(1j * (np.angle(x) - model.am_pm(a_in)))


# --------------------------------------------------------------------------
# Doppler / orbit
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DopplerParams:
    """Circular-orbit pass geometry.

    ``eta_form`` selects the elevation factor: ``"printed"`` uses
    ``cos(acos((r_e/r_o) * theta_max) - theta_max)``, ``"standard"`` uses
    ``cos(acos((r_e/r_o) * cos(theta_max)) - theta_max)``.
    """

    f_c: float
    w_s: float
    theta_max: float
    r_o: float
    r_e: float = EARTH_RADIUS_M
    c: float = SPEED_OF_LIGHT
    eta_form: str = "printed"

    def __post_init__(self):
        if not self.r_o > self.r_e > 0:
            raise ValueError("need r_o > r_e > 0")
        if self.w_s <= 0:
            raise ValueError("w_s must be positive")
        if not 0 < self.theta_max <= np.pi / 2:
            raise ValueError("theta_max must be in (0, pi/2]")
        if self.eta_form not in ("printed", "standard"):
            raise ValueError(f"unknown eta_form {self.eta_form!r}")

    @classmethod
    def circular_orbit(cls, altitude_m: float, f_c: float, theta_max: float = np.pi / 2,
                       eta_form: str = "printed") -> "DopplerParams":
        """Keplerian angular velocity ``sqrt(mu / r_o^3)`` for the given altitude."""
        r_o = EARTH_RADIUS_M + altitude_m
        return cls(f_c=f_c, w_s=float(np.sqrt(EARTH_MU / r_o ** 3)), theta_max=theta_max,
                   r_o=r_o, eta_form=eta_form)

    @property
    def eta(self) -> float:
        ratio = self.r_e / self.r_o
        arg = ratio * (self.theta_max if self.eta_form == "printed" else np.cos(self.theta_max))
        if abs(arg) > 1:
            raise ValueError(f"elevation factor undefined: acos argument {arg:.4f} outside [-1, 1]")
        return float(np.cos(np.arccos(arg) - self.theta_max))

    def horizon_time(self) -> float:
        """Time from closest approach to zero elevation."""
        arg = self.r_e / (self.r_o * self.eta)
        if arg > 1:
            raise ValueError("pass never rises above the horizon")
        return float(np.arccos(arg) / self.w_s)


def doppler_shift_at(t, p: DopplerParams):
    """Time-varying Doppler shift of a circular-orbit pass, in Hz."""
    t = np.asarray(t, dtype=float)
    eta = p.eta
    wt = p.w_s * t
    rad = p.r_e ** 2 + p.r_o ** 2 - 2 * p.r_e * p.r_o * np.cos(wt) * eta
    if np.any(rad <= 0):
        raise ValueError("non-positive slant-range argument")
    out = -p.f_c * p.w_s * p.r_e * p.r_o * np.sin(wt) * eta / (p.c * np.sqrt(rad))
    return float(out) if out.ndim == 0 else out


def max_doppler(p: DopplerParams, t_max: float | None = None, n: int = 200_001) -> float:
    """``max |f_d(t)|`` over ``[-t_max, t_max]`` (default: the visible pass)."""
    if t_max is None:
        t_max = p.horizon_time()
    return float(np.max(np.abs(doppler_shift_at(np.linspace(-t_max, t_max, n), p))))


# --------------------------------------------------------------------------
# TDL multipath
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Tap:
    delay_samples: int
    gain: complex
    extra_doppler_hz: float = 0.0


@dataclass(frozen=True)
class TdlProfile:
    taps: tuple
    carrier_offset_phase: float = 0.0
    carrier_freq_hz: float = 0.0
    normalized: bool = True

    def __post_init__(self):
        if not self.taps:
            raise ValueError("TDL profile needs at least one tap")
        d = [t.delay_samples for t in self.taps]
        if any(x < 0 for x in d) or any(b < a for a, b in zip(d, d[1:])):
            raise ValueError("tap delays must be non-negative and non-decreasing")
        if self.normalized:
            p = sum(abs(t.gain) ** 2 for t in self.taps)
            if abs(p - 1) > 1e-9:
                raise ValueError(f"normalized profile has total power {p}")

    @property
    def max_delay(self) -> int:
        return self.taps[-1].delay_samples

    @property
    def gains(self) -> np.ndarray:
        return np.array([t.gain for t in self.taps], dtype=complex)

    def rms_delay_spread(self) -> float:
        """RMS delay spread in samples."""
        p = np.abs(self.gains) ** 2
        d = np.array([t.delay_samples for t in self.taps], dtype=float)
        p = p / p.sum()
        mean = p @ d
        return float(np.sqrt(max(p @ d ** 2 - mean ** 2, 0.0)))

    def with_random_phases(self, rng: np.random.Generator) -> "TdlProfile":
        ph = np.exp(2j * np.pi * rng.random(len(self.taps)))
        taps = tuple(dataclasses.replace(t, gain=complex(t.gain * u)) for t, u in zip(self.taps, ph))
        return dataclasses.replace(self, taps=taps)


def _rms_of_geometric(rho: float, spacing: int, n_taps: int) -> float:
    w = rho ** np.arange(n_taps)
    w = w / w.sum()
    d = spacing * np.arange(n_taps)
    return float(np.sqrt(max(w @ d ** 2 - (w @ d) ** 2, 0.0)))


def make_tdl_profile(delay_spread_ns: float, sample_rate: float, n_taps: int = 3) -> TdlProfile:
    """Whole-sample TDL with a requested RMS delay spread.

    Taps sit at ``0, d, 2d, ...`` samples with powers ``1, rho, rho^2, ...``
    (normalised). ``d`` is the smallest whole spacing for which a flat profile
    reaches the target; ``rho`` in ``[0, 1]`` is then found by root finding so
    the RMS spread is exact. Sub-sample spreads therefore give a dominant
    first tap with weak echoes rather than coalesced taps.
    """
    if delay_spread_ns < 0:
        raise ValueError("delay spread must be non-negative")
    if n_taps < 1:
        raise ValueError("need at least one tap")
    target = delay_spread_ns * 1e-9 * sample_rate
    if n_taps == 1 or target == 0:
        gains = np.zeros(n_taps)
        gains[0] = 1.0
        return TdlProfile(taps=tuple(Tap(k, complex(g)) for k, g in enumerate(gains)))
    flat = _rms_of_geometric(1.0, 1, n_taps)
    spacing = max(1, int(np.ceil(target / flat - 1e-12)))
    if _rms_of_geometric(1.0, spacing, n_taps) - target < 1e-12:
        rho = 1.0
    else:
        rho = brentq(lambda r: _rms_of_geometric(r, spacing, n_taps) - target, 0.0, 1.0, xtol=1e-15)
    p = rho ** np.arange(n_taps)
    g = np.sqrt(p / p.sum())
    return TdlProfile(taps=tuple(Tap(spacing * k, complex(gk)) for k, gk in enumerate(g)))


def tdl_apply(sig, profile: TdlProfile, fd_hz, sample_rate: float,
              rng: np.random.Generator | None = None) -> np.ndarray:
    """Tapped-delay-line channel with Doppler.

    ``y[n] = sum_i h_i v[n - d_i] exp(-j 2 pi (f0 + fd[n] + f_i)(n - d_i)/fs + j sigma0)``

    The time origin is the first input sample. ``fd_hz`` is a scalar or a
    per-output-sample array. With ``rng`` the tap phases are re-drawn
    uniformly first. The output keeps the full convolution tail.
    """
    v = np.asarray(sig, dtype=complex)
    if rng is not None:
        profile = profile.with_random_phases(rng)
    n_out = v.shape[0] + profile.max_delay
    if profile.max_delay >= max(v.shape[0], 1):
        raise ValueError("tap delay exceeds signal length")
    fd = np.broadcast_to(np.asarray(fd_hz, dtype=float), (n_out,))
    n = np.arange(n_out)
    y = np.zeros(n_out, dtype=complex)
    for tap in profile.taps:
        if tap.gain == 0:
            continue
        d = tap.delay_samples
        t = (n[d:d + v.shape[0]] - d) / sample_rate
        f = profile.carrier_freq_hz + fd[d:d + v.shape[0]] + tap.extra_doppler_hz
        y[d:d + v.shape[0]] += tap.gain * v * np.exp(-2j * np.pi * f * t + 1j * profile.carrier_offset_phase)
    return y


# --------------------------------------------------------------------------
# frequency offset, phase noise, I/Q imbalance, AWGN
# --------------------------------------------------------------------------

def freq_offset_apply(sig, epsilon_hz: float, sample_rate_hz: float) -> np.ndarray:
    if sample_rate_hz <= 0:
        raise ValueError("sample rate must be positive")
    x = np.asarray(sig, dtype=complex)
    return x * np.exp(-2j * np.pi * epsilon_hz * np.arange(x.shape[0]) / sample_rate_hz)


DEFAULT_PHASE_NOISE_MASK = ((100.0, -30.0), (1e3, -60.0), (1e4, -75.0), (1e5, -90.0), (1e6, -96.0))


def _mask_psd(mask, f):
    """One-sided PSD (rad^2/Hz) of a log-linear mask, held flat beyond its ends."""
    off = np.log10([m[0] for m in mask])
    lvl = np.array([m[1] for m in mask], dtype=float)
    lf = np.log10(np.maximum(f, 1e-300))
    return 10 ** (np.interp(lf, off, lvl) / 10)


def phase_noise_process(mask, n: int, sample_rate: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian phase process whose one-sided PSD follows ``mask``.

    ``mask`` is a list of ``(offset_hz, dBc/Hz)`` points, interpolated
    linearly in log-frequency. White noise is shaped in the frequency domain;
    the DC bin is dropped, a constant phase being part of the carrier offset.
    """
    mask = tuple(mask)
    if not mask:
        raise ValueError("phase-noise mask is empty")
    offs = [m[0] for m in mask]
    if any(o <= 0 for o in offs) or any(b <= a for a, b in zip(offs, offs[1:])):
        raise ValueError("mask offsets must be positive and strictly increasing")
    if n < 1:
        raise ValueError("n must be positive")
    w = rng.standard_normal(n)
    f = np.fft.rfftfreq(n, d=1 / sample_rate)
    shape = np.sqrt(_mask_psd(mask, f) * sample_rate / 2)
    shape[0] = 0.0
    return np.fft.irfft(np.fft.rfft(w) * shape, n=n)


def iq_phase_noise_apply(sig, eta_a: float, eta_phi: float, phi) -> np.ndarray:
    """I/Q imbalance followed by the phase-noise rotation ``exp(j phi)``.

    ``y = [(1+eta_a)(xI c - xQ s) + j (1-eta_a)(xQ c - xI s)] e^{j phi}``
    with ``c, s = cos(eta_phi/2), sin(eta_phi/2)``.
    """
    x = np.asarray(sig, dtype=complex)
    phi = np.asarray(phi, dtype=float)
    if phi.shape != x.shape:
        raise ValueError(f"phase vector shape {phi.shape} does not match signal {x.shape}")
    c, s = np.cos(eta_phi / 2), np.sin(eta_phi / 2)
    xi, xq = x.real, x.imag
    y = (1 + eta_a) * (xi * c - xq * s) + 1j * (1 - eta_a) * (xq * c - xi * s)
    return y * np.exp(1j * phi)


def awgn_apply(sig, snr_db: float, rng: np.random.Generator, signal_power: float | None = None) -> np.ndarray:
    """Add circular complex Gaussian noise of variance ``signal_power / 10^(snr/10)``.

    ``signal_power`` defaults to the measured mean power of ``sig``.
    """
    x = np.asarray(sig, dtype=complex)
    if signal_power is None:
        signal_power = float(np.mean(np.abs(x) ** 2)) if x.size else 0.0
    if signal_power <= 0:
        raise ValueError("AWGN needs a signal with positive power")
    var = signal_power / 10 ** (snr_db / 10)
    noise = rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape)
    return x + np.sqrt(var / 2) * noise


# --------------------------------------------------------------------------
# composition
# --------------------------------------------------------------------------

CASES = ("case1", "case2", "case3", "case4")


@dataclass(frozen=True)
class ImpairmentConfig:
    """Every impairment parameter plus per-stage switches.

    The TDL profile is generated from ``delay_spread_ns`` unless an explicit
    ``tdl_profile`` is given.
    """

    hpa: SalehHpa | LutHpa = field(default_factory=SalehHpa)
    hpa_enabled: bool = True
    ideal_predistortion: bool = False
    tdl_enabled: bool = True
    delay_spread_ns: float = 10.0
    n_tdl_taps: int = 3
    tdl_profile: TdlProfile | None = None
    random_tap_phases: bool = True
    doppler_hz: float = 1000.0
    residual_offset_hz: float = 0.0
    phase_noise_enabled: bool = True
    phase_noise_mask: tuple = DEFAULT_PHASE_NOISE_MASK
    eta_a: float = 0.0
    eta_phi: float = 1.39
    snr_db: float = 10.0
    seed: int = 0

    def profile(self, sample_rate: float) -> TdlProfile:
        if self.tdl_profile is not None:
            return self.tdl_profile
        return make_tdl_profile(self.delay_spread_ns, sample_rate, self.n_tdl_taps)

    def for_case(self, case_id: str) -> "ImpairmentConfig":
        """Realise one of the four benchmark conditions on top of this config.

        case1: raw HPA, all impairments. case2: ideal pre-distortion, all
        impairments. case3: pre-distortion, no phase noise or I/Q imbalance.
        case4: pre-distortion and AWGN only.
        """
        if case_id not in CASES:
            raise ValueError(f"unknown case {case_id!r}")
        rep = dataclasses.replace
        if case_id == "case1":
            return rep(self, ideal_predistortion=False)
        if case_id == "case2":
            return rep(self, ideal_predistortion=True)
        if case_id == "case3":
            return rep(self, ideal_predistortion=True, phase_noise_enabled=False, eta_a=0.0, eta_phi=0.0)
        return rep(self, ideal_predistortion=True, phase_noise_enabled=False, eta_a=0.0, eta_phi=0.0,
                   tdl_enabled=False, residual_offset_hz=0.0)


def propagate(frame: Frame, cfg: ImpairmentConfig) -> Frame:
    """Send every symbol of ``frame`` through the enabled impairment stages.

    Each symbol is a burst whose deterministic rotations (Doppler, residual
    offset) start from its own first sample; the TDL tap phases and the
    phase-noise trajectory are shared by the whole frame. Noise power is
    referenced to the mean transmitted power, so back-off costs SNR.
    Received symbols are ``max_delay`` samples longer than transmitted ones.
    """
    fs = frame.sample_rate
    tdl_ss, pn_ss, awgn_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    symbols = frame.symbols
    tx_power = float(np.mean([np.mean(np.abs(s) ** 2) for s in symbols]))

    profile = cfg.profile(fs) if cfg.tdl_enabled else None
    if profile is not None and cfg.random_tap_phases:
        profile = profile.with_random_phases(np.random.default_rng(tdl_ss))
    max_delay = profile.max_delay if profile is not None else 0

    sym_len = symbols[0].shape[0]
    out_len = sym_len + max_delay
    phi_all = None
    if cfg.phase_noise_enabled:
        phi_all = phase_noise_process(cfg.phase_noise_mask, len(symbols) * sym_len + max_delay, fs,
                                      np.random.default_rng(pn_ss))
    noise_rng = np.random.default_rng(awgn_ss)

    out = []
    for k, s in enumerate(symbols):
        v = np.asarray(s, dtype=complex)
        if cfg.hpa_enabled:
            if cfg.ideal_predistortion:
                v = ideal_predistort(v, cfg.hpa)
            v = hpa_apply(v, cfg.hpa)
        if profile is not None:
            v = tdl_apply(v, profile, cfg.doppler_hz, fs)
        if cfg.residual_offset_hz:
            v = freq_offset_apply(v, cfg.residual_offset_hz, fs)
        phi = phi_all[k * sym_len:k * sym_len + out_len] if phi_all is not None else np.zeros(out_len)
        if cfg.eta_a or cfg.eta_phi or phi_all is not None:
            v = iq_phase_noise_apply(v, cfg.eta_a, cfg.eta_phi, phi)
        out.append(awgn_apply(v, cfg.snr_db, noise_rng, signal_power=tx_power))
    return frame.replace_symbols(out)
