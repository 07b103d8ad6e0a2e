"""Time-frequency images and reduced ZC cross-correlation features.

Indexing is 0-based throughout: row ``r`` of the reshaped correlation
holds ``gamma_re[r * V1 : (r + 1) * V1]``, so the 1-based element
``gamma_re(V/5 + 1)`` of the textbook layout is ``gamma_re[V1]`` here.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil

import numpy as np

from .capture import SignalCapture
from .dsp import next_fast_len, rate_ratio, resample_rational, window
from .profiles import DroneProfile
from .synth import symbol_body


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 256           # W, also the window length
    hop: int | None = None        # defaults to W / 2
    window: str = "hann"
    image_size: tuple[int, int] = (64, 64)   # (time, frequency)
    db_floor: float = -60.0

    def __post_init__(self):
        if not 1 <= self.step <= self.fft_size:
            raise ValueError("hop must satisfy 1 <= hop <= W")

    @property
    def step(self) -> int:
        return self.hop if self.hop is not None else self.fft_size // 2


@dataclass
class TfiImage:
    """``magnitudes`` is (frames, W) in natural FFT bin order; ``image`` is the
    dB-scaled, [0, 1]-normalized, resized version with frequency centred."""

    magnitudes: np.ndarray = field(repr=False)
    image: np.ndarray = field(repr=False)
    db_floor: float = -60.0


@dataclass(frozen=True)
class ReductionConfig:
    segments: int = 20              # U
    segment_length: int = 5000      # V
    seed: int = 0

    def __post_init__(self):
        if self.segments < 1 or self.segment_length < 5:
            raise ValueError("need U >= 1 and V >= 5")
        if self.segment_length % 5:
            raise ValueError("segment_length must be divisible by 5")

    @property
    def total(self) -> int:  # L_re
        return self.segments * self.segment_length

    @property
    def rows(self) -> int:  # U1
        return 5 * self.segments

    @property
    def width(self) -> int:  # V1
        return self.segment_length // 5


@dataclass
class ZcFeature:
    gamma_re: np.ndarray = field(repr=False)   # (n_roots, L_re)
    stack: np.ndarray = field(repr=False)      # (n_roots, V1)
    offsets: np.ndarray = field(repr=False)


# ---------------------------------------------------------------- TFI

def stft_magnitude(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    w = window(cfg.window, cfg.fft_size)
    n_frames = (x.size - cfg.fft_size) // cfg.step + 1
    out = np.empty((n_frames, cfg.fft_size))
    chunk = max(1, (1 << 21) // cfg.fft_size)
    for i0 in range(0, n_frames, chunk):
        idx = (np.arange(i0, min(i0 + chunk, n_frames)) * cfg.step)[:, None] + np.arange(cfg.fft_size)
        out[i0: i0 + idx.shape[0]] = np.abs(np.fft.fft(x[idx] * w, axis=1))
    return out


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) matrix averaging input cells by fractional overlap."""
    edges = np.linspace(0.0, n_in, n_out + 1)
    lo = np.arange(n_in)[None, :]
    overlap = np.clip(np.minimum(edges[1:, None], lo + 1) - np.maximum(edges[:-1, None], lo), 0, None)
    return overlap / overlap.sum(axis=1, keepdims=True)


def area_resize(a: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    return _area_weights(a.shape[0], shape[0]) @ a @ _area_weights(a.shape[1], shape[1]).T


def stft_tfi(capture: SignalCapture, cfg: StftConfig = StftConfig()) -> TfiImage:
    x = capture.samples
    if x.size < cfg.fft_size:
        raise ValueError("capture shorter than window")
    mag = stft_magnitude(x, cfg)
    peak = mag.max()
    if peak <= 0:
        return TfiImage(mag, np.zeros(cfg.image_size), cfg.db_floor)
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(mag / peak)
    db = np.maximum(db, cfg.db_floor)
    img = area_resize(np.fft.fftshift(db, axes=1), cfg.image_size)
    lo, hi = img.min(), img.max()
    img = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
    return TfiImage(mag, img, cfg.db_floor)


# ---------------------------------------------------------------- ZC

def template_length(profile: DroneProfile, f_s: float) -> int:
    r = rate_ratio(f_s, profile.bandwidth)
    return ceil(profile.n_fft * r.numerator / r.denominator)


def build_zc_template(profile: DroneProfile, root_index: int, f_s: float) -> np.ndarray:
    """Unit-energy ZC-bearing symbol (no CP) resampled to ``f_s``.

    The symbol is cyclically extended before resampling so the filter sees
    the same neighbourhood it would inside a CP-prefixed frame.
    """
    if not 0 <= root_index < len(profile.zc_roots):
        raise ValueError(f"root index {root_index} invalid for {profile.type_label}")
    body = symbol_body(profile, profile.zc_roots[root_index])
    r = rate_ratio(f_s, profile.bandwidth)
    p, q = r.numerator, r.denominator
    n = profile.n_fft
    n_up = ceil(n * p / q)
    if p == q:
        y = body
    else:
        pre = q * ceil(64 / q)   # multiple of q so the body lands on an output sample
        idx = np.arange(-pre, n + 64 + q) % n
        y = resample_rational(body[idx], p, q)
        start = pre * p // q
        y = y[start: start + n_up]
    return y / np.linalg.norm(y)


def select_segments(n: int, cfg: ReductionConfig) -> np.ndarray:
    """U ascending, non-overlapping V-length segment offsets inside [0, n).

    Draws U sorted gap positions uniformly from the slack ``n - U V`` and
    places segment i at ``gap_i + i V``; deterministic per seed.
    """
    u, v = cfg.segments, cfg.segment_length
    slack = n - u * v
    if slack < 0:
        raise ValueError("segments exceed capture")
    rng = np.random.default_rng(cfg.seed)
    gaps = np.sort(rng.integers(0, slack + 1, size=u))
    return gaps + np.arange(u) * v


def _segments(x: np.ndarray, offsets, v: int) -> np.ndarray:
    offsets = np.asarray(offsets)
    if offsets.size and (offsets.min() < 0 or offsets.max() + v > x.size):
        raise ValueError("segment outside capture")
    return x[offsets[:, None] + np.arange(v)]


def zc_xcorr(capture: SignalCapture, offsets, template, segment_length: int) -> np.ndarray:
    """Per-segment |sum_k y(k) conj(x_seg(k+m))|, m = 0..V-1, concatenated.

    Each segment is zero-extended by len(template) samples at its tail, so
    every segment yields exactly V lags and nothing correlates across
    segment joins.
    """
    y = np.asarray(template, dtype=np.complex128)
    v = segment_length
    if y.size > v:
        raise ValueError("template longer than segment")
    segs = _segments(capture.samples, offsets, v)
    nfft = next_fast_len(v + y.size)
    c = np.fft.ifft(np.fft.fft(segs, nfft, axis=1) * np.conj(np.fft.fft(y, nfft)), axis=1)
    return np.abs(c[:, :v]).ravel()


def zc_xcorr_direct(capture: SignalCapture, offsets, template, segment_length: int) -> np.ndarray:
    """Direct-summation reference for :func:`zc_xcorr`."""
    y = np.asarray(template, dtype=np.complex128)
    v = segment_length
    segs = _segments(capture.samples, offsets, v)
    out = []
    for seg in segs:
        ext = np.concatenate([seg, np.zeros(y.size, dtype=np.complex128)])
        win = np.lib.stride_tricks.sliding_window_view(ext, y.size)[:v]
        out.append(np.abs(win.conj() @ y))
    return np.concatenate(out)


def reduce(gamma_re, cfg: ReductionConfig) -> np.ndarray:
    """Row-major reshape to (5U, V/5), then the maximum of each column."""
    g = np.asarray(gamma_re, dtype=float)
    if g.shape != (cfg.total,):
        raise ValueError(f"gamma_re length {g.size} != U*V = {cfg.total}")
    return g.reshape(cfg.rows, cfg.width).max(axis=0)


def extract_zc_stack(capture: SignalCapture, templates, cfg: ReductionConfig) -> ZcFeature:
    """Reduced correlation features for every template, on shared segments."""
    offsets = select_segments(len(capture), cfg)
    gammas = np.stack(
        [zc_xcorr(capture, offsets, t, cfg.segment_length) for t in templates]
    )
    stack = np.stack([reduce(g, cfg) for g in gammas])
    return ZcFeature(gamma_re=gammas, stack=stack, offsets=offsets)


def registry_templates(profiles, f_s: float) -> list[np.ndarray]:
    """Primary-root template of each profile, in registry order."""
    return [build_zc_template(p, 0, f_s) for p in profiles]
