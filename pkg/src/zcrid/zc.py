"""Zadoff-Chu sequences and their cyclic correlation identities."""
from __future__ import annotations

from dataclasses import dataclass, field
from math import gcd, sqrt

import numpy as np

from .dsp import as_complex


@dataclass(frozen=True)
class ZcSpec:
    """Root ``u`` and odd length ``length`` of a Zadoff-Chu sequence.

    Besides ``1 <= u <= length - 1`` the root must be coprime to the length;
    without that the sequence loses its ideal cyclic autocorrelation.
    """

    u: int
    length: int

    def __post_init__(self):
        if self.length < 3 or self.length % 2 == 0:
            raise ValueError(
                f"ZC length must be odd and >= 3 (got {self.length}); "
                "the i(i+1) phase form is the odd-length convention"
            )
        if not 1 <= self.u <= self.length - 1:
            raise ValueError("root out of range")
        if gcd(self.u, self.length) != 1:
            raise ValueError("non-coprime root")


@dataclass
class CrossRootReport:
    n_d: int
    peak_magnitude: float
    peak_count: int
    peak_positions: list[int]
    measured: np.ndarray = field(repr=False)
    # True when the brute-force magnitudes agree with the closed form
    consistent: bool = True


def generate_zc(spec: ZcSpec) -> np.ndarray:
    """z_u(i) = exp(-j*pi*u*i*(i+1)/L), i = 0..L-1."""
    i = np.arange(spec.length, dtype=np.int64)
    # reduce the exponent modulo 2L in integers to keep the phase exact
    phase = (spec.u * i * (i + 1)) % (2 * spec.length)
    return np.exp(-1j * np.pi * phase / spec.length)


def cyclic_cross_correlate(a, b) -> np.ndarray:
    """|sum_k a(k) conj(b((k+m) mod n))| for m = 0..n-1, via FFT."""
    a = as_complex(a, "a")
    b = as_complex(b, "b")
    if a.size != b.size:
        raise ValueError("length mismatch")
    return np.abs(np.fft.ifft(np.fft.fft(b) * np.conj(np.fft.fft(a))))


def cyclic_cross_correlate_direct(a, b) -> np.ndarray:
    """Brute-force counterpart of :func:`cyclic_cross_correlate`."""
    a = as_complex(a, "a")
    b = as_complex(b, "b")
    if a.size != b.size:
        raise ValueError("length mismatch")
    n = a.size
    idx = (np.arange(n)[None, :] + np.arange(n)[:, None]) % n
    return np.abs((a[None, :] * np.conj(b[idx])).sum(axis=1))


def expected_cross_peak(u1: int, u2: int, length: int, tol: float = 1e-6) -> CrossRootReport:
    """Closed-form cross-root peak structure, checked against brute force.

    With N_d = gcd(L, |u1 - u2|) the cyclic cross-correlation of two roots
    has L/N_d peaks of magnitude sqrt(N_d * L) and is zero elsewhere.
    Equal roots give N_d = L, i.e. the single autocorrelation peak.
    """
    z1 = generate_zc(ZcSpec(u1, length))
    z2 = generate_zc(ZcSpec(u2, length))
    n_d = gcd(length, abs(u1 - u2))
    peak = sqrt(n_d * length)
    measured = cyclic_cross_correlate_direct(z1, z2)
    positions = [int(m) for m in np.flatnonzero(measured > tol * length)]
    consistent = (
        len(positions) == length // n_d
        and bool(np.allclose(measured[positions], peak, rtol=1e-9, atol=0.0))
    )
    return CrossRootReport(
        n_d=n_d,
        peak_magnitude=peak,
        peak_count=length // n_d,
        peak_positions=positions,
        measured=measured,
        consistent=consistent,
    )
