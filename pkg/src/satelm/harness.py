"""Monte-Carlo BER sweeps, metrics, FLOP model and result export."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erfc

from .channel import ImpairmentConfig, LutHpa, SalehHpa, propagate
from .numerics import SingularSystemError, compute_stats, default_ridge
from .receivers import (
    Variant,
    build_tap_matrix,
    equalize_ls,
    equalize_ml,
    equalize_mmse,
    hidden_layer,
    init_input_layer,
    ls_channel_estimate,
    rx_window,
    train,
)
from .waveform import (
    OfdmParams,
    body_to_symbols,
    build_frame,
    despread,
    ofdm_to_subcarriers,
    qam_constellation,
    qam_demap,
)

ML_RECEIVERS = ("ELM", "CELM", "CELMAH", "CELM_WLLS")
BASELINES = ("LS", "MMSE")
SWEEP_VARIABLES = ("snr_db", "delay_spread_ns", "eta_phi", "doppler_hz", "ibo_db")
CSV_COLUMNS = ("sweep_variable", "sweep_value", "receiver", "case", "ber",
               "bits_total", "bits_error", "flops", "seed")


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

def ber(tx_bits, rx_bits) -> float:
    tx = np.asarray(tx_bits).ravel()
    rx = np.asarray(rx_bits).ravel()
    if tx.shape != rx.shape:
        raise ValueError(f"bit streams differ in length: {tx.size} vs {rx.size}")
    if tx.size == 0:
        raise ValueError("empty bit stream")
    return float(np.count_nonzero(tx != rx)) / tx.size


def impropriety_coefficient(sig) -> float:
    """``|sum z^2| / sum |z|^2``: 0 for circular signals, 1 for real ones."""
    z = np.asarray(sig, dtype=complex).ravel()
    if z.size == 0:
        raise ValueError("empty signal")
    power = float(np.sum(np.abs(z) ** 2))
    if power == 0:
        raise ValueError("zero-power signal")
    return float(abs(np.sum(z * z)) / power)


def qfunc(x):
    return 0.5 * erfc(np.asarray(x) / np.sqrt(2))


def theoretical_ber(snr_db, order: int = 4):
    """Gray-coded square QAM over AWGN at ``Es/N0 = snr``.

    Exact for 4-QAM; nearest-neighbour approximation for 16-QAM.
    """
    snr = 10 ** (np.asarray(snr_db, dtype=float) / 10)
    if order == 4:
        return qfunc(np.sqrt(snr))
    if order == 16:
        return 0.75 * qfunc(np.sqrt(snr / 5))
    raise ValueError(f"unsupported order {order}")


def snr_at_ber(snr_db, bers, target: float) -> float:
    """SNR where a BER curve crosses ``target``, by log-linear interpolation.

    Returns NaN when the curve never crosses the target.
    """
    x = np.asarray(snr_db, dtype=float)
    y = np.asarray(bers, dtype=float)
    lt = np.log10(target)
    for k in range(len(x) - 1):
        a, b = y[k], y[k + 1]
        if a >= target >= b and a > 0:
            if b <= 0:
                return float(x[k + 1])
            la, lb = np.log10(a), np.log10(b)
            if la == lb:
                return float(x[k])
            return float(x[k] + (la - lt) / (la - lb) * (x[k + 1] - x[k]))
    return float("nan")


def isotonic_decreasing(y, w=None) -> np.ndarray:
    """Least-squares non-increasing fit (pool adjacent violators)."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    vals, wts, sizes = [], [], []
    for yi, wi in zip(y, w):
        vals.append(yi)
        wts.append(wi)
        sizes.append(1)
        while len(vals) > 1 and vals[-2] < vals[-1]:
            v2, w2, s2 = vals.pop(), wts.pop(), sizes.pop()
            v1, w1, s1 = vals.pop(), wts.pop(), sizes.pop()
            vals.append((v1 * w1 + v2 * w2) / (w1 + w2))
            wts.append(w1 + w2)
            sizes.append(s1 + s2)
    return np.repeat(vals, sizes)


# --------------------------------------------------------------------------
# FLOP model
# --------------------------------------------------------------------------

FLOPS_CMAC = 8       # complex multiply-add
FLOPS_CADD = 2
FLOPS_CDIV = 11
FLOPS_RMAC = 2
FLOPS_ASINH_C = 30   # nominal cost of one complex asinh (sqrt, log, a few mults)
FLOPS_ASINH_R = 15
COMPLEX_FACTOR = 4   # real-arithmetic LAPACK counts -> complex


def _fft(n: int) -> float:
    return 5 * n * math.log2(n)


def _svd(m: int, n: int, complex_: bool = True) -> float:
    # thin SVD (U1, S, V) by R-SVD, Golub & Van Loan: 6 m n^2 + 20 n^3
    base = 6 * m * n ** 2 + 20 * n ** 3
    return COMPLEX_FACTOR * base if complex_ else base


def _hidden(N: int, L: int, I: int) -> float:
    return N * L * I * FLOPS_CMAC + N * L * FLOPS_CADD + N * L * FLOPS_ASINH_C


def flops_ledger(variant: str, N: int, L: int, I: int, n_cp: int = 72) -> dict:
    """Per-stage FLOP counts: training on one pilot plus equalising one symbol.

    Conventions: complex multiply-add = 8, complex add = 2, complex divide
    = 11 real FLOPs; an n-point FFT costs ``5 n log2 n``; factorisations use
    real-arithmetic textbook counts times 4 for complex data. Conjugation is
    free. One-tap baselines include the ``n_cp``-tap constrained LS fit of
    the pilot estimate (Levinson solve) and the DFT despreading.
    """
    if min(N, L, I, n_cp) < 1:
        raise ValueError("dimensions must be positive")
    v = variant.upper()
    if v in ("LS", "MMSE"):
        per_sc = FLOPS_CDIV if v == "LS" else 6 + 3 + 1 + 2
        return {
            "pilot_fft": _fft(N),
            "pilot_products": N * (6 + 3),
            "toeplitz_fit": 3 * _fft(N) + 4 * n_cp ** 2 * FLOPS_CMAC,
            "data_fft": _fft(N),
            "one_tap": N * per_sc,
            "despread": _fft(N),
        }
    if v == "ELM":
        return {
            "hidden_train": N * L * 2 * I * FLOPS_RMAC + N * L + N * L * FLOPS_ASINH_R,
            "solve": _svd(N, L, complex_=False) + 2 * (N * L + L * L) * FLOPS_RMAC,
            "hidden_infer": N * L * 2 * I * FLOPS_RMAC + N * L + N * L * FLOPS_ASINH_R,
            "predict": 2 * N * L * FLOPS_RMAC,
        }
    hid = _hidden(N, L, I)
    if v == "CELM":
        return {
            "hidden_train": hid,
            "solve": _svd(N, L) + (N * L + L * L) * FLOPS_CMAC + 2 * L,
            "hidden_infer": hid,
            "predict": N * L * FLOPS_CMAC,
        }
    if v == "CELMAH":
        K = 2 * L
        return {
            "hidden_train": hid,
            "solve": _svd(N, K) + (N * K + K * K) * FLOPS_CMAC + 2 * K,
            "hidden_infer": hid,
            "predict": N * K * FLOPS_CMAC,
        }
    if v == "CELM_WLLS":
        tri = L * (L + 1) // 2
        chol = COMPLEX_FACTOR * L ** 3 / 3
        return {
            "hidden_train": hid,
            "gram_C_P": 2 * N * tri * FLOPS_CMAC,
            "cross_r_s": 2 * N * L * FLOPS_CMAC,
            "solve": (2 * chol + (L + 1) * L * L * FLOPS_CMAC + L ** 3 * FLOPS_CMAC
                      + 3 * L * L * FLOPS_CMAC + L * L * FLOPS_CADD),
            "hidden_infer": hid,
            "predict": 2 * N * L * FLOPS_CMAC,
        }
    raise ValueError(f"unknown receiver {variant!r}")


def flops_estimate(variant: str, N: int, L: int, I: int, n_cp: int = 72) -> int:
    return int(round(sum(flops_ledger(variant, N, L, I, n_cp).values())))


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ReceiverSpec:
    """One receiver curve. ``case`` only matters for LS/MMSE."""

    name: str
    case: str | None = None
    L: int = 6
    theta: float = 1.0
    I: int | None = None
    ridge: float = 0.0

    def __post_init__(self):
        if self.name not in ML_RECEIVERS + BASELINES:
            raise ValueError(f"unknown receiver {self.name!r}")

    @property
    def is_ml(self) -> bool:
        return self.name in ML_RECEIVERS


@dataclass(frozen=True)
class ExperimentConfig:
    ofdm: OfdmParams = field(default_factory=OfdmParams)
    qam_order: int = 4
    channel: ImpairmentConfig = field(default_factory=ImpairmentConfig)
    receivers: tuple = (ReceiverSpec("CELM"), ReceiverSpec("CELMAH"), ReceiverSpec("CELM_WLLS"),
                        ReceiverSpec("MMSE", "case1"))
    case_id: str = "case1"
    sweep_variable: str = "snr_db"
    sweep_values: tuple = (0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0)
    fixed_snr_db: float = 10.0
    n_frames: int = 200
    master_seed: int = 0
    n_data_symbols: int = 13
    ls_smoothing: bool = True

    def __post_init__(self):
        if self.sweep_variable not in SWEEP_VARIABLES:
            raise ValueError(f"unknown sweep variable {self.sweep_variable!r}")
        vals = tuple(float(v) for v in self.sweep_values)
        if not vals or list(vals) != sorted(vals):
            raise ValueError("sweep values must be a non-empty sorted list")
        object.__setattr__(self, "sweep_values", vals)
        object.__setattr__(self, "receivers", tuple(self.receivers))
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        if not self.receivers:
            raise ValueError("no receivers configured")
        keys = [(r.name, self.receiver_case(r)) for r in self.receivers]
        if len(set(keys)) != len(keys):
            raise ValueError("receiver curves must be unique per (name, case)")

    def receiver_case(self, spec: ReceiverSpec) -> str:
        # ML receivers always see the raw channel
        return "case1" if spec.is_ml else (spec.case or self.case_id)

    def taps(self, spec: ReceiverSpec) -> int:
        return spec.I if spec.I is not None else self.channel.n_tdl_taps

    def channel_at(self, value: float) -> ImpairmentConfig:
        """Channel config at one sweep point (before any case toggling)."""
        ch = self.channel
        rep = dataclasses.replace
        snr = value if self.sweep_variable == "snr_db" else self.fixed_snr_db
        ch = rep(ch, snr_db=float(snr))
        if self.sweep_variable == "delay_spread_ns":
            ch = rep(ch, delay_spread_ns=float(value), tdl_profile=None)
        elif self.sweep_variable == "eta_phi":
            ch = rep(ch, eta_phi=float(value))
        elif self.sweep_variable == "doppler_hz":
            ch = rep(ch, doppler_hz=float(value))
        elif self.sweep_variable == "ibo_db":
            ch = rep(ch, hpa=rep(ch.hpa, ibo_db=float(value)))
        return ch

    # ---- JSON ------------------------------------------------------------
    def to_dict(self) -> dict:
        ch = dataclasses.asdict(self.channel)
        ch["phase_noise_mask"] = [list(m) for m in self.channel.phase_noise_mask]
        if self.channel.tdl_profile is not None:
            ch["tdl_profile"] = {
                "taps": [[t.delay_samples, t.gain.real, t.gain.imag, t.extra_doppler_hz]
                         for t in self.channel.tdl_profile.taps],
                "carrier_offset_phase": self.channel.tdl_profile.carrier_offset_phase,
                "carrier_freq_hz": self.channel.tdl_profile.carrier_freq_hz,
                "normalized": self.channel.tdl_profile.normalized,
            }
        if isinstance(self.channel.hpa, LutHpa):
            ch["hpa"] = {"table": [list(r) for r in zip(self.channel.hpa.input_amplitude,
                                                         self.channel.hpa.output_amplitude,
                                                         self.channel.hpa.phase_shift)],
                         "ibo_db": self.channel.hpa.ibo_db}
        return {
            "ofdm": dataclasses.asdict(self.ofdm),
            "qam_order": self.qam_order,
            "channel": ch,
            "receivers": [dataclasses.asdict(r) for r in self.receivers],
            "case_id": self.case_id,
            "sweep": {"variable": self.sweep_variable, "values": list(self.sweep_values)},
            "fixed_snr_db": self.fixed_snr_db,
            "n_frames": self.n_frames,
            "master_seed": self.master_seed,
            "n_data_symbols": self.n_data_symbols,
            "ls_smoothing": self.ls_smoothing,
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        from .channel import Tap, TdlProfile

        d = dict(d)
        kw = {}
        if "ofdm" in d:
            kw["ofdm"] = OfdmParams(**d.pop("ofdm"))
        if "channel" in d:
            ch = dict(d.pop("channel"))
            hpa = ch.pop("hpa", None)
            if isinstance(hpa, dict):
                if "table" in hpa:
                    tab = np.asarray(hpa["table"], dtype=float)
                    ch["hpa"] = LutHpa(tuple(tab[:, 0]), tuple(tab[:, 1]), tuple(tab[:, 2]),
                                       hpa.get("ibo_db", 0.0))
                elif "file" in hpa:
                    p = Path(hpa["file"])
                    if base_dir is not None and not p.is_absolute():
                        p = base_dir / p
                    ch["hpa"] = LutHpa.from_file(p, hpa.get("ibo_db", 0.0))
                else:
                    ch["hpa"] = SalehHpa(**hpa)
            if "phase_noise_mask" in ch:
                ch["phase_noise_mask"] = tuple(tuple(m) for m in ch["phase_noise_mask"])
            prof = ch.pop("tdl_profile", None)
            if prof:
                taps = tuple(Tap(int(t[0]), complex(t[1], t[2]), float(t[3]) if len(t) > 3 else 0.0)
                             for t in prof["taps"])
                ch["tdl_profile"] = TdlProfile(taps=taps, carrier_offset_phase=prof.get("carrier_offset_phase", 0.0),
                                               carrier_freq_hz=prof.get("carrier_freq_hz", 0.0),
                                               normalized=prof.get("normalized", True))
            kw["channel"] = ImpairmentConfig(**ch)
        if "receivers" in d:
            kw["receivers"] = tuple(ReceiverSpec(**r) if isinstance(r, dict) else ReceiverSpec(r)
                                    for r in d.pop("receivers"))
        if "sweep" in d:
            sw = d.pop("sweep")
            kw["sweep_variable"] = sw["variable"]
            kw["sweep_values"] = tuple(sw["values"])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw.update(d)
        return cls(**kw)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValueError(f"{path}: cannot load config ({exc})") from exc
        return cls.from_dict(data, base_dir=path.parent)


# --------------------------------------------------------------------------
# trials and sweeps
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ResultRecord:
    sweep_value: float
    receiver: str
    case_id: str
    ber: float
    bits_total: int
    bits_error: int
    flops: int
    seed: int

    def __post_init__(self):
        if self.bits_total <= 0:
            raise ValueError("bits_total must be positive")


def trial_seed(master_seed: int, sweep_index: int, frame_index: int) -> int:
    """Stable 64-bit seed for one trial.

    ``SeedSequence(master_seed, spawn_key=(sweep_index, frame_index))``,
    first two 32-bit words of its state, little-endian.
    """
    ss = np.random.SeedSequence(master_seed, spawn_key=(sweep_index, frame_index))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def _fallback_ridge(Z, x, spec: ReceiverSpec, seed: int) -> float:
    W, b = init_input_layer(spec.L, Z.n_taps, spec.theta, np.random.default_rng(seed))
    return default_ridge(compute_stats(hidden_layer(Z, W, b), x))


def _train_ml(spec: ReceiverSpec, Z, x, seed: int):
    try:
        return train(Z, x, spec.name, L=spec.L, seed=seed, theta=spec.theta, ridge=spec.ridge)
    except SingularSystemError:
        if spec.ridge > 0:
            raise
        return train(Z, x, spec.name, L=spec.L, seed=seed, theta=spec.theta,
                     ridge=_fallback_ridge(Z, x, spec, seed))


def run_trial(cfg: ExperimentConfig, sweep_value: float, frame_index: int,
              sweep_index: int | None = None) -> list[ResultRecord]:
    """Simulate one frame at one sweep point for every configured receiver.

    The frame, the channel realisation (shared by all cases) and the ELM
    input layers (shared by all ML variants) are drawn from the trial seed,
    so curves are compared on common random numbers.
    """
    if sweep_index is None:
        sweep_index = cfg.sweep_values.index(float(sweep_value))
    seed = trial_seed(cfg.master_seed, sweep_index, frame_index)
    frame_ss, chan_ss, net_ss = np.random.SeedSequence(seed).spawn(3)
    chan_seed = int(chan_ss.generate_state(1, dtype=np.uint64)[0])
    net_seed = int(net_ss.generate_state(1, dtype=np.uint64)[0])

    params = cfg.ofdm
    const = qam_constellation(cfg.qam_order)
    frame = build_frame(np.random.default_rng(frame_ss), const, params, cfg.n_data_symbols)
    channel = dataclasses.replace(cfg.channel_at(sweep_value), seed=chan_seed)
    tx_power = float(np.mean([np.mean(np.abs(s) ** 2) for s in frame.symbols]))
    noise_var = tx_power / 10 ** (channel.snr_db / 10)
    bits_per_sym = params.n_occupied * const.bits_per_symbol
    tx_bits = frame.tx_bits.reshape(cfg.n_data_symbols, bits_per_sym)

    received = {}

    def rx_for(case):
        if case not in received:
            received[case] = propagate(frame, channel.for_case(case))
        return received[case]

    tx_pilot_sc = ofdm_to_subcarriers(frame.pilot_symbol, params)
    out = []
    for spec in cfg.receivers:
        case = cfg.receiver_case(spec)
        rx = rx_for(case)
        errors = 0
        if spec.is_ml:
            I = cfg.taps(spec)
            N = params.n_fft
            Z = build_tap_matrix(rx_window(rx.pilot_symbol, params, I), N, I)
            x_pilot = frame.pilot_symbol[params.n_cp:]
            net = _train_ml(spec, Z, x_pilot, net_seed)
            for k, sym in enumerate(rx.data_symbols):
                body = equalize_ml(rx_window(sym, params, I), net, N, I)
                errors += np.count_nonzero(qam_demap(body_to_symbols(body, params), const) != tx_bits[k])
            flops = flops_estimate(spec.name, N, spec.L, I)
        else:
            est = ls_channel_estimate(ofdm_to_subcarriers(rx.pilot_symbol, params), tx_pilot_sc,
                                      noise_var=noise_var,
                                      n_taps=params.n_cp if cfg.ls_smoothing else None)
            eq = equalize_ls if spec.name == "LS" else equalize_mmse
            for k, sym in enumerate(rx.data_symbols):
                sc = eq(ofdm_to_subcarriers(sym, params), est)
                errors += np.count_nonzero(qam_demap(despread(sc, params), const) != tx_bits[k])
            flops = flops_estimate(spec.name, params.n_fft, spec.L, cfg.taps(spec), params.n_cp)
        total = tx_bits.size
        out.append(ResultRecord(sweep_value=float(sweep_value), receiver=spec.name, case_id=case,
                                ber=errors / total, bits_total=total, bits_error=int(errors),
                                flops=flops, seed=seed))
    return out


def _trial_task(args):
    cfg, value, frame_index, sweep_index = args
    return run_trial(cfg, value, frame_index, sweep_index)


def aggregate(records, master_seed: int) -> list[ResultRecord]:
    """Sum error counts per (sweep value, receiver, case)."""
    acc = {}
    for r in records:
        key = (r.sweep_value, r.receiver, r.case_id)
        tot, err, fl = acc.get(key, (0, 0, r.flops))
        acc[key] = (tot + r.bits_total, err + r.bits_error, fl)
    return sort_records(
        ResultRecord(sweep_value=k[0], receiver=k[1], case_id=k[2], ber=e / t, bits_total=t,
                     bits_error=e, flops=f, seed=master_seed)
        for k, (t, e, f) in acc.items()
    )


def sort_records(records) -> list[ResultRecord]:
    return sorted(records, key=lambda r: (r.sweep_value, r.receiver, r.case_id))


def run_sweep(cfg: ExperimentConfig, jobs: int = 1) -> list[ResultRecord]:
    """All ``n_frames`` trials at every sweep point, merged by summing counts.

    Trial seeds are fixed before dispatch, so the result does not depend on
    ``jobs``.
    """
    tasks = [(cfg, v, f, i) for i, v in enumerate(cfg.sweep_values) for f in range(cfg.n_frames)]
    if jobs <= 1:
        parts = [_trial_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_trial_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    return aggregate([r for p in parts for r in p], cfg.master_seed)


# --------------------------------------------------------------------------
# export
# --------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def export(records, fmt: str, path, sweep_variable: str = "snr_db", metadata: dict | None = None) -> Path:
    """Write records as CSV or JSON, sorted by (sweep_value, receiver, case).

    CSV carries no timestamps; JSON keeps one under ``metadata.created``.
    """
    records = sort_records(records)
    if not records:
        raise ValueError("no records to export")
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    path = Path(path)
    try:
        if fmt == "csv":
            with path.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(CSV_COLUMNS)
                for r in records:
                    w.writerow([sweep_variable, _fmt(r.sweep_value), r.receiver, r.case_id, _fmt(r.ber),
                                r.bits_total, r.bits_error, r.flops, r.seed])
        else:
            meta = {"created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
                    "sweep_variable": sweep_variable}
            meta.update(metadata or {})
            doc = {"metadata": meta,
                   "records": [dict(dataclasses.asdict(r), sweep_variable=sweep_variable) for r in records]}
            path.write_text(json.dumps(doc, indent=1) + "\n")
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc
    return path


def load_records(path) -> list[ResultRecord]:
    """Parse a file written by :func:`export`."""
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        return [ResultRecord(**{k: v for k, v in r.items() if k != "sweep_variable"}) for r in doc["records"]]
    with path.open(newline="") as fh:
        return [ResultRecord(sweep_value=float(row["sweep_value"]), receiver=row["receiver"],
                             case_id=row["case"], ber=float(row["ber"]), bits_total=int(row["bits_total"]),
                             bits_error=int(row["bits_error"]), flops=int(row["flops"]), seed=int(row["seed"]))
                for row in csv.DictReader(fh)]
