"""Labeled synthetic drone captures.

The pipeline for one capture is: tile OFDM downlink frames at the frame
period (random phase), resample from the grid rate B to the capture rate,
add the hopping uplink, pass through a 3-tap multipath channel, scale by
the distance factor, add interference bursts, and finally add white
Gaussian noise.

Noise is calibrated against the power the drone signal would have at the
reference distance (D00), measured over signal-active samples.  Longer
distances therefore lower the effective SNR, while the noise floor stays
independent of the class.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil

import numpy as np

from . import profiles as prof
from .capture import SignalCapture
from .dsp import as_complex, rate_ratio, resample_rational
from .profiles import DroneProfile, FhssPlan, ZcPlacement
from .zc import generate_zc

# signal-only reference power for background captures
BACKGROUND_POWER = 1.0


@dataclass(frozen=True)
class InterferenceSpec:
    """Poisson bursts of band-limited Gaussian noise.

    ``burst_power_db`` is relative to the reference signal power.
    """

    burst_rate: float = 50.0
    burst_bandwidth: float = 2e6
    burst_duration: float = 1e-3
    burst_power_db: float = 3.0

    def __post_init__(self):
        for name in ("burst_rate", "burst_bandwidth", "burst_duration"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @classmethod
    def for_scale(cls, scale: str) -> "InterferenceSpec":
        # 20 MHz-wide bursts at full scale, bandwidth divided by 10 on the desk
        return cls(burst_bandwidth=20e6 if scale == "full" else 2e6)

    @classmethod
    def none(cls) -> "InterferenceSpec":
        return cls(burst_rate=0.0)


@dataclass(frozen=True)
class CaptureRequest:
    profile: DroneProfile | None  # None requests a background capture
    sample_rate: float
    duration: float
    snr_db: float
    distance: str = "D00"
    interference: InterferenceSpec = field(default_factory=InterferenceSpec)
    seed: int = 0
    multipath: bool = True

    def __post_init__(self):
        if not -30.0 <= self.snr_db <= 30.0:
            raise ValueError("snr_db must lie in [-30, 30]")
        if self.distance not in prof.DISTANCE_RANGES:
            raise ValueError(f"unknown distance label {self.distance!r}")
        if self.profile is not None:
            if self.sample_rate < self.profile.bandwidth:
                raise ValueError("sample_rate below the profile bandwidth")
            if self.duration < self.profile.period:
                raise ValueError("capture too short")
        elif self.duration <= 0:
            raise ValueError("capture too short")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))

    @property
    def type_label(self) -> str:
        return "T0000" if self.profile is None else self.profile.type_label


@dataclass
class SynthResult:
    capture: SignalCapture
    type_label: str
    distance_label: str
    clean: np.ndarray = field(repr=False)       # drone signal after channel and distance
    active: np.ndarray = field(repr=False)      # bool mask of signal-active samples
    reference_power: float = 1.0
    noise_power: float = 1.0
    zc_body_starts: list[int] = field(default_factory=list)  # output-rate, primary root

    @property
    def label(self) -> str:
        return self.type_label + self.distance_label


# ---------------------------------------------------------------- OFDM

def subcarrier_split(profile: DroneProfile) -> tuple[int, int]:
    """(negative, positive) count of data subcarriers around the null DC bin.

    Odd occupancies split evenly; 1201 occupied bins in a 2048 grid leave
    424 virtual bins below and 423 above.
    """
    data = profile.occupied_bins - 1
    pos = data // 2
    return data - pos, pos


def data_bins(profile: DroneProfile) -> np.ndarray:
    """FFT bin indices of the data subcarriers, ascending in frequency."""
    neg, pos = subcarrier_split(profile)
    k = np.concatenate([np.arange(-neg, 0), np.arange(1, pos + 1)])
    return k % profile.n_fft


def zc_bins(profile: DroneProfile, length: int) -> np.ndarray:
    """Central data bins carrying a length-``length`` ZC sequence, DC skipped."""
    neg, pos = subcarrier_split(profile)
    h_neg = length // 2
    h_pos = length - h_neg
    if h_neg > neg or h_pos > pos:
        raise ValueError("ZC does not fit grid")
    k = np.concatenate([np.arange(-h_neg, 0), np.arange(1, h_pos + 1)])
    return k % profile.n_fft


def zc_grid(profile: DroneProfile, placement: ZcPlacement) -> np.ndarray:
    grid = np.zeros(profile.n_fft, dtype=np.complex128)
    grid[zc_bins(profile, placement.length)] = generate_zc(placement.spec)
    return grid


def _grid_to_time(grid: np.ndarray) -> np.ndarray:
    # unit mean power regardless of how many bins are loaded
    n_active = np.count_nonzero(grid)
    return np.fft.ifft(grid) * (grid.size / np.sqrt(n_active))


def symbol_body(profile: DroneProfile, placement: ZcPlacement) -> np.ndarray:
    """Time-domain ZC-bearing symbol without CP, at the native rate."""
    return _grid_to_time(zc_grid(profile, placement))


def symbol_starts(profile: DroneProfile) -> np.ndarray:
    """Native-rate start of each symbol (CP included) within a frame."""
    lengths = np.array([profile.n_fft + cp for cp in profile.cp_plan])
    return np.concatenate([[0], np.cumsum(lengths)[:-1]])


def body_starts(profile: DroneProfile) -> np.ndarray:
    """Native-rate start of each symbol body (first sample after its CP)."""
    return symbol_starts(profile) + np.array(profile.cp_plan)


def _zc_slots(profile: DroneProfile) -> dict[int, ZcPlacement]:
    slots = {}
    for zp in profile.zc_roots:
        for s in zp.symbols:
            slots[s] = zp
    return slots


def build_ofdm_frame(profile: DroneProfile, seed: int) -> np.ndarray:
    """One downlink frame at the native rate B.

    ZC-bearing symbols carry their root on the central data bins; every
    other symbol carries seeded random QPSK on all data bins.
    """
    rng = np.random.default_rng(seed)
    slots = _zc_slots(profile)
    bins = data_bins(profile)
    zc_bodies = {id(zp): symbol_body(profile, zp) for zp in profile.zc_roots}
    parts = []
    for s, cp in enumerate(profile.cp_plan):
        if s in slots:
            body = zc_bodies[id(slots[s])]
        else:
            grid = np.zeros(profile.n_fft, dtype=np.complex128)
            bits = rng.integers(0, 2, size=(bins.size, 2))
            grid[bins] = ((2 * bits[:, 0] - 1) + 1j * (2 * bits[:, 1] - 1)) / np.sqrt(2)
            body = _grid_to_time(grid)
        parts.append(body[body.size - cp:] if cp else body[:0])
        parts.append(body)
    return np.concatenate(parts)


# ---------------------------------------------------------------- FHSS

def fhss_hop_order(plan: FhssPlan, n_dwells: int, seed: int) -> np.ndarray:
    """Hop indices for ``n_dwells`` dwells: concatenated seeded permutations."""
    rng = np.random.default_rng(seed)
    return _draw_order(rng, len(plan.hops), n_dwells)


def _draw_order(rng, n_hops: int, n_dwells: int) -> np.ndarray:
    cycles = max(1, ceil(n_dwells / n_hops))
    order = np.concatenate([rng.permutation(n_hops) for _ in range(cycles)])
    return order[:n_dwells]


def _check_plan(plan: FhssPlan, f_s: float) -> None:
    if not plan.hops:
        raise ValueError("empty hop set")
    if plan.dwell <= 0:
        raise ValueError("dwell must be positive")
    if not 0 < plan.duty <= 1:
        raise ValueError("duty must lie in (0, 1]")
    for f in plan.hops:
        if abs(f) + plan.hop_bandwidth / 2 > f_s / 2:
            raise ValueError("hop out of band")


def fhss_schedule(plan: FhssPlan, duration: float, f_s: float, seed: int):
    """List of (start, stop, hop_frequency) burst intervals in samples."""
    _check_plan(plan, f_s)
    n = int(round(duration * f_s))
    dwell = max(1, int(round(plan.dwell * f_s)))
    n_dwells = ceil(n / dwell) if n else 0
    order = fhss_hop_order(plan, n_dwells, seed)
    on = max(1, int(round(dwell * plan.duty)))
    out = []
    for j, h in enumerate(order):
        a = j * dwell
        out.append((a, min(a + on, n), plan.hops[int(h)]))
    return out


def gen_fhss(plan: FhssPlan, duration: float, f_s: float, seed: int) -> np.ndarray:
    """Constant-envelope hopping bursts, unit amplitude while on.

    Each burst is continuous-phase binary FSK around its hop frequency with
    deviation ``hop_bandwidth / 4`` and symbol rate ``hop_bandwidth / 2``;
    a zero hop bandwidth degenerates to a pure tone.
    """
    sched = fhss_schedule(plan, duration, f_s, seed)
    n = int(round(duration * f_s))
    out = np.zeros(n, dtype=np.complex128)
    if n == 0:
        return out
    # separate stream so the hop order depends on the seed alone
    rng = np.random.default_rng([seed, 1])
    dev = plan.hop_bandwidth / 4.0
    sym_len = max(1, int(round(f_s / (plan.hop_bandwidth / 2.0)))) if plan.hop_bandwidth > 0 else 0
    phase0 = rng.uniform(0, 2 * np.pi)
    for a, b, f in sched:
        m = b - a
        inst = np.full(m, f)
        if sym_len:
            bits = rng.integers(0, 2, size=ceil(m / sym_len)) * 2 - 1
            inst = inst + dev * np.repeat(bits, sym_len)[:m]
        phase = phase0 + 2 * np.pi * np.cumsum(inst) / f_s
        out[a:b] = np.exp(1j * phase)
        phase0 = phase[-1]
    return out


# ---------------------------------------------------------------- channel

def add_awgn(seq, snr_db: float, signal_power: float, seed: int) -> np.ndarray:
    """Add circular complex Gaussian noise of variance P / 10^(snr/10)."""
    x = as_complex(seq)
    if not signal_power > 0:
        raise ValueError("signal_power must be positive")
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    var = signal_power / 10.0 ** (snr_db / 10.0)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(x.size) + 1j * rng.standard_normal(x.size)
    return x + noise * np.sqrt(var / 2.0)


def multipath_taps(rng) -> tuple[np.ndarray, np.ndarray]:
    """Seeded 3-tap channel: delays (samples) and unit-energy complex gains."""
    d1 = int(rng.integers(1, 5))
    d2 = int(rng.integers(d1 + 1, 9))
    mags = np.array([1.0, rng.uniform(0.03, 0.1), rng.uniform(0.01, 0.05)])
    phases = np.concatenate([[0.0], rng.uniform(0, 2 * np.pi, 2)])
    gains = mags * np.exp(1j * phases)
    return np.array([0, d1, d2]), gains / np.linalg.norm(gains)


def apply_multipath(x: np.ndarray, delays, gains) -> np.ndarray:
    h = np.zeros(int(max(delays)) + 1, dtype=np.complex128)
    h[np.asarray(delays)] = gains
    return np.convolve(x, h)[: x.size]


def interference_bursts(
    spec: InterferenceSpec, n: int, f_s: float, ref_power: float, rng
) -> np.ndarray:
    out = np.zeros(n, dtype=np.complex128)
    if spec.burst_rate <= 0 or spec.burst_duration <= 0 or spec.burst_bandwidth <= 0:
        return out
    m = max(1, int(round(spec.burst_duration * f_s)))
    count = rng.poisson(spec.burst_rate * n / f_s)
    bw = min(spec.burst_bandwidth, f_s)
    power = ref_power * 10.0 ** (spec.burst_power_db / 10.0)
    freqs = np.fft.fftfreq(m, 1.0 / f_s)
    for _ in range(count):
        start = int(rng.integers(-m + 1, n))
        fc = rng.uniform(-(f_s - bw) / 2, (f_s - bw) / 2)
        spec_ = np.fft.fft(rng.standard_normal(m) + 1j * rng.standard_normal(m))
        spec_[np.abs(freqs - fc) > bw / 2] = 0
        burst = np.fft.ifft(spec_)
        p = np.mean(np.abs(burst) ** 2)
        if p == 0:
            continue
        burst *= np.sqrt(power / p)
        a, b = max(start, 0), min(start + m, n)
        out[a:b] += burst[a - start: b - start]
    return out


# ---------------------------------------------------------------- capture

def _downlink(profile: DroneProfile, n_out: int, f_s: float, rng_frames, rng_offset):
    """Tiled and resampled downlink plus its activity mask and ZC positions."""
    ratio = rate_ratio(f_s, profile.bandwidth)
    p, q = ratio.numerator, ratio.denominator
    n_native = ceil(n_out * q / p) + 64
    native = np.zeros(n_native, dtype=np.complex128)
    active = np.zeros(n_out, dtype=bool)
    period = profile.period * profile.bandwidth
    offset = rng_offset.uniform(0, period)
    flen = profile.frame_length
    zc_rel = []
    if profile.zc_roots:
        first = profile.primary_root.symbols
        zc_rel = [int(body_starts(profile)[s]) for s in first]
    zc_starts = []
    j = -1
    while True:
        start = int(round(offset + j * period))
        if start >= n_native:
            break
        frame = build_ofdm_frame(profile, int(rng_frames.integers(2**63)))
        a, b = max(start, 0), min(start + flen, n_native)
        if b > a:
            native[a:b] = frame[a - start: b - start]
            lo = int(round(a * p / q))
            hi = min(int(round(b * p / q)), n_out)
            active[lo:hi] = True
        zc_starts += [int(round((start + r) * p / q)) for r in zc_rel if 0 <= start + r]
        j += 1
    out = resample_rational(native, p, q)[:n_out]
    return out, active, [s for s in zc_starts if s < n_out]


def synth_capture(req: CaptureRequest) -> SynthResult:
    f_s = req.sample_rate
    n = req.n_samples
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(req.seed).spawn(6)]
    r_frames, r_offset, r_fhss, r_mp, r_intf, r_noise = streams
    profile = req.profile
    zc_starts: list[int] = []
    if profile is None:
        clean = np.zeros(n, dtype=np.complex128)
        active = np.zeros(n, dtype=bool)
        ref = BACKGROUND_POWER
    else:
        clean, active, zc_starts = _downlink(profile, n, f_s, r_frames, r_offset)
        if profile.fhss is not None:
            plan = profile.fhss
            up = gen_fhss(plan, n / f_s, f_s, int(r_fhss.integers(2**63)))[:n]
            clean = clean + up * 10.0 ** (plan.power_db / 20.0)
            active |= up != 0
        if req.multipath:
            clean = apply_multipath(clean, *multipath_taps(r_mp))
        ref = float(np.mean(np.abs(clean[active]) ** 2)) if active.any() else BACKGROUND_POWER
        clean = clean * prof.distance_gain(req.distance)
    received = clean + interference_bursts(req.interference, n, f_s, ref, r_intf)
    received = add_awgn(received, req.snr_db, ref, int(r_noise.integers(2**63)))
    meta = {
        "type_label": req.type_label,
        "distance_label": req.distance,
        "label": req.type_label + req.distance,
        "snr_db": float(req.snr_db),
        "seed": int(req.seed),
        "profile": profile.name if profile is not None else prof.DRONE_NAMES["T0000"],
    }
    return SynthResult(
        capture=SignalCapture(received, f_s, meta),
        type_label=req.type_label,
        distance_label=req.distance,
        clean=clean,
        active=active,
        reference_power=ref,
        noise_power=ref / 10.0 ** (req.snr_db / 10.0),
        zc_body_starts=zc_starts,
    )


def ofdm_capture(
    profile: DroneProfile,
    sample_rate: float,
    n_samples: int,
    snr_db: float | None,
    seed: int,
    multipath: bool = True,
) -> SignalCapture:
    """Downlink-only capture (no uplink, no interference) for estimator studies."""
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]
    x, active, _ = _downlink(profile, n_samples, sample_rate, streams[0], streams[1])
    if multipath:
        x = apply_multipath(x, *multipath_taps(streams[2]))
    if snr_db is not None:
        ref = float(np.mean(np.abs(x[active]) ** 2))
        x = add_awgn(x, snr_db, ref, int(streams[3].integers(2**63)))
    return SignalCapture(x, sample_rate, {"snr_db": snr_db, "seed": seed})
