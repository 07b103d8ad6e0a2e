"""Numeric primitives shared by the rest of the package.

Conventions: the forward DFT is unnormalized and the inverse carries the
1/n factor, so ``dft_inverse(dft_forward(x)) == x``.  Everything runs in
double precision.
"""
from __future__ import annotations

from fractions import Fraction
from functools import lru_cache
from math import gcd

import numpy as np
from scipy import signal as sps

# Taps per polyphase branch of the resampling filter.
TAPS_PER_PHASE = 64
KAISER_BETA = 8.0


def as_complex(seq, name: str = "sequence") -> np.ndarray:
    """Validate and convert ``seq`` to a 1-D complex128 array."""
    x = np.asarray(seq)
    if x.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if x.size == 0:
        raise ValueError("empty sequence")
    x = x.astype(np.complex128, copy=False)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def dft_forward(seq) -> np.ndarray:
    return np.fft.fft(as_complex(seq))


def dft_inverse(spectrum) -> np.ndarray:
    return np.fft.ifft(as_complex(spectrum, "spectrum"))


def dft_direct(seq) -> np.ndarray:
    """O(n^2) reference DFT, used only to check the fast path."""
    x = as_complex(seq)
    n = x.size
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) @ x


def window(kind: str, length: int) -> np.ndarray:
    """Window values in [0, 1].

    ``hann`` is the periodic form (first sample 0, peak 1), which is the
    right choice for spectral averaging; ``rectangular`` is all ones.
    """
    if length < 2:
        raise ValueError("window length must be >= 2")
    if kind == "hann":
        n = np.arange(length)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)
    if kind in ("rectangular", "boxcar", "rect"):
        return np.ones(length)
    raise ValueError(f"unknown window kind {kind!r}")


def rate_ratio(f_out: float, f_in: float, max_denominator: int = 4096) -> Fraction:
    """Rational approximation of ``f_out / f_in``.

    Integer-Hz rates are reduced exactly; anything else goes through
    ``Fraction.limit_denominator``.
    """
    if f_out <= 0 or f_in <= 0:
        raise ValueError("invalid ratio")
    if float(f_out).is_integer() and float(f_in).is_integer():
        r = Fraction(int(f_out), int(f_in))
        if r.denominator <= max_denominator and r.numerator <= 64 * max_denominator:
            return r
    return Fraction(f_out / f_in).limit_denominator(max_denominator)


@lru_cache(maxsize=64)
def resampling_filter(p: int, q: int) -> np.ndarray:
    """Kaiser-windowed sinc low-pass with unit DC gain for a p/q resampler.

    Length is ``TAPS_PER_PHASE * max(p, q) + 1`` and the cutoff sits at the
    narrower of the two Nyquist limits.
    """
    m = max(p, q)
    numtaps = TAPS_PER_PHASE * m + 1
    h = sps.firwin(numtaps, 1.0 / m, window=("kaiser", KAISER_BETA))
    h.setflags(write=False)
    return h


def resample_rational(seq, p: int, q: int) -> np.ndarray:
    """Polyphase resampling by p/q; output length is ``ceil(len * p / q)``."""
    x = as_complex(seq)
    if p < 1 or q < 1 or int(p) != p or int(q) != q:
        raise ValueError("invalid ratio")
    g = gcd(int(p), int(q))
    p, q = int(p) // g, int(q) // g
    if p == q == 1:
        return x.copy()
    h = resampling_filter(p, q)
    # resample_poly scales a user-supplied filter by p itself
    return sps.resample_poly(x, p, q, window=np.array(h))


def next_fast_len(n: int) -> int:
    from scipy.fft import next_fast_len as _nfl

    return _nfl(int(n))
