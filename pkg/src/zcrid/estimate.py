"""Blind OFDM parameter estimation.

Welch PSD -> -3 dB occupied bandwidth -> grid resolution (N, N_v, B), and
independently the CP-induced autocorrelation peak at lag N * f_s / B,
which cross-checks the subcarrier count.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import median_filter

from .capture import SignalCapture
from .dsp import next_fast_len, window

DEFAULT_CANDIDATES = (512, 1024, 2048, 4096)
NOMINAL_FRAME = 10e-3  # s; LTE radio frame, sizes the default autocorrelation window
FILL_RANGE = (0.5, 0.75)


@dataclass(frozen=True)
class WelchConfig:
    segment_length: int = 4096
    offset: int | None = None     # D; defaults to half the segment
    window: str = "hann"

    def __post_init__(self):
        if self.segment_length < 2:
            raise ValueError("segment_length must be >= 2")
        if not 1 <= self.hop <= self.segment_length:
            raise ValueError("offset must satisfy 1 <= D <= L_w")

    @property
    def hop(self) -> int:
        return self.offset if self.offset is not None else self.segment_length // 2

    def n_segments(self, n: int) -> int:
        return (n - self.segment_length) // self.hop + 1


@dataclass
class PsdEstimate:
    """Averaged periodogram, centred: ``values[i]`` belongs to ``freqs[i]``."""

    values: np.ndarray
    freqs: np.ndarray
    bin_spacing: float
    n_segments: int = 0


@dataclass
class BandwidthEstimate:
    bandwidth: float
    f_low: float
    f_high: float

    @property
    def bandwidth_mhz(self) -> int:
        return int(round(self.bandwidth / 1e6))


@dataclass
class GridEstimate:
    b_hat_v: float
    occupied_bins: int
    n_fft: int
    n_virtual: int
    bandwidth: float
    spacing: float


@dataclass
class AutocorrResult:
    gamma: np.ndarray = field(repr=False)
    n_up: int = 0
    m_star: int = 0
    lag_range: tuple[int, int] = (0, 0)


def welch_psd(capture: SignalCapture, cfg: WelchConfig = WelchConfig()) -> PsdEstimate:
    """Average of K windowed periodograms at offsets i*D.

    Each periodogram is |DFT(x_i w)|^2 / (L_w * mean(w^2)); the window-power
    term makes the bin mean equal the signal power for any window (it is 1
    for the rectangular window).
    """
    x = capture.samples
    lw = cfg.segment_length
    if x.size < lw:
        raise ValueError("capture shorter than segment")
    w = window(cfg.window, lw)
    k = cfg.n_segments(x.size)
    acc = np.zeros(lw)
    # chunked to bound memory on long captures
    step = max(1, (1 << 22) // lw)
    for i0 in range(0, k, step):
        idx = (np.arange(i0, min(i0 + step, k)) * cfg.hop)[:, None] + np.arange(lw)
        acc += (np.abs(np.fft.fft(x[idx] * w, axis=1)) ** 2).sum(axis=0)
    values = acc / (k * lw * np.mean(w**2))
    df = capture.sample_rate / lw
    return PsdEstimate(
        values=np.fft.fftshift(values),
        freqs=np.fft.fftshift(np.fft.fftfreq(lw, 1.0 / capture.sample_rate)),
        bin_spacing=df,
        n_segments=k,
    )


def estimate_bandwidth(psd: PsdEstimate, smooth: int = 5, drop_db: float = 3.0) -> BandwidthEstimate:
    """Width between the outermost (peak - 3 dB) crossings.

    The PSD is median-smoothed over ``smooth`` bins first; crossings are
    placed by linear interpolation between neighbouring bins.
    """
    s = median_filter(np.asarray(psd.values, dtype=float), size=smooth, mode="nearest")
    peak = s.max()
    floor = np.median(s)
    if not peak > 0 or peak < floor * 10.0:
        raise ValueError("no occupied band")
    thr = peak * 10.0 ** (-drop_db / 10.0)
    above = np.flatnonzero(s >= thr)
    lo, hi = above[0], above[-1]
    if lo == 0 or hi == s.size - 1:
        raise ValueError("no occupied band")
    f = psd.freqs
    f_low = f[lo - 1] + (thr - s[lo - 1]) / (s[lo] - s[lo - 1]) * (f[lo] - f[lo - 1])
    f_high = f[hi] + (s[hi] - thr) / (s[hi] - s[hi + 1]) * (f[hi + 1] - f[hi])
    return BandwidthEstimate(bandwidth=float(f_high - f_low), f_low=float(f_low), f_high=float(f_high))


def resolve_grid(
    b_hat_v: float,
    f_s: float,
    candidates=DEFAULT_CANDIDATES,
    spacings=(15e3,),
    fill=FILL_RANGE,
) -> GridEstimate:
    """Turn an occupied bandwidth into a full OFDM grid hypothesis.

    For each spacing in the family, the occupied subcarrier count is
    ``round(b_hat_v / spacing)``; a candidate N is admissible when it
    equals that count (no virtual subcarriers) or the occupied fraction
    falls inside ``fill`` and N * spacing fits under ``f_s``.  The first
    admissible (spacing, N) pair in the given order wins.
    """
    candidates = sorted(candidates)
    if not candidates:
        raise ValueError("empty candidate set")
    for spacing in spacings:
        occ = int(round(b_hat_v / spacing))
        if occ < 1:
            continue
        exact = [n for n in candidates if n == occ]
        ranged = [n for n in candidates if fill[0] <= occ / n <= fill[1]]
        for n in exact + ranged:
            if n * spacing <= f_s:
                return GridEstimate(
                    b_hat_v=b_hat_v,
                    occupied_bins=occ,
                    n_fft=n,
                    n_virtual=n - occ,
                    bandwidth=n * spacing,
                    spacing=spacing,
                )
    raise ValueError("unresolvable grid")


def lag_window(f_s: float, bandwidth: float, candidates=DEFAULT_CANDIDATES) -> tuple[int, int]:
    """Search range [0.5 min(N), 1.5 max(N)] * f_s / B, past the zero-lag peak."""
    r = f_s / bandwidth
    return int(np.floor(0.5 * min(candidates) * r)), int(np.ceil(1.5 * max(candidates) * r))


def default_n_up(n: int, f_s: float, max_lag: int) -> int:
    """Two nominal frame durations, shortened if the capture cannot hold them."""
    return int(max(1, min(round(2 * NOMINAL_FRAME * f_s), n - max_lag - 1)))


def autocorr(capture: SignalCapture, n_up: int, lag_range: tuple[int, int] | None = None) -> AutocorrResult:
    """gamma(m) = |sum_{k<N_up} x(k) conj(x(k+m))| for m = 0..L-N_up-1.

    ``m_star`` is the argmax inside ``lag_range`` (inclusive bounds).
    """
    x = capture.samples
    n = x.size
    if n_up >= n:
        raise ValueError("window too long")
    if n_up < 1:
        raise ValueError("n_up must be positive")
    n_lags = n - n_up
    lo, hi = lag_range if lag_range is not None else (0, n_lags - 1)
    if not 0 <= lo <= hi <= n_lags - 1:
        raise ValueError("lag range outside [0, L - N_up - 1]")
    nfft = next_fast_len(n + n_up)
    c = np.fft.ifft(np.fft.fft(x, nfft) * np.conj(np.fft.fft(x[:n_up], nfft)))
    gamma = np.abs(c[:n_lags])
    m_star = lo + int(np.argmax(gamma[lo: hi + 1]))
    return AutocorrResult(gamma=gamma, n_up=n_up, m_star=m_star, lag_range=(lo, hi))


def estimate_subcarrier_count(
    ac: AutocorrResult, f_s: float, bandwidth: float, candidates=DEFAULT_CANDIDATES
) -> int:
    """Candidate N whose expected CP lag N * f_s / B is nearest to m_star.

    Ties go to the larger N.
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    best = None
    for n in sorted(candidates, reverse=True):
        expected = n * f_s / bandwidth
        dist = abs(ac.m_star - expected)
        if best is None or dist < best[0]:
            best = (dist, n, expected)
    dist, n, expected = best
    if dist > 0.1 * expected:
        raise ValueError("no credible peak")
    return n


@dataclass
class AnalysisReport:
    psd: PsdEstimate
    band: BandwidthEstimate
    grid: GridEstimate
    ac: AutocorrResult
    n_hat: int


def analyze(
    capture: SignalCapture,
    welch: WelchConfig = WelchConfig(),
    candidates=DEFAULT_CANDIDATES,
    spacings=(15e3,),
    n_up: int | None = None,
) -> AnalysisReport:
    """Full blind analysis of one capture."""
    psd = welch_psd(capture, welch)
    band = estimate_bandwidth(psd)
    grid = resolve_grid(band.bandwidth, capture.sample_rate, candidates, spacings)
    lags = lag_window(capture.sample_rate, grid.bandwidth, candidates)
    hi = min(lags[1], len(capture) - 2)
    if n_up is None:
        n_up = default_n_up(len(capture), capture.sample_rate, hi)
    hi = min(hi, len(capture) - n_up - 1)
    ac = autocorr(capture, n_up, (min(lags[0], hi), hi))
    n_hat = estimate_subcarrier_count(ac, capture.sample_rate, grid.bandwidth, candidates)
    return AnalysisReport(psd, band, grid, ac, n_hat)
