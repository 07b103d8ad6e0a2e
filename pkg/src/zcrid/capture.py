"""Capture container and the on-disk I/Q format.

A capture on disk is a pair of files sharing a stem:

* ``<stem>.iq`` - little-endian interleaved float32 I/Q pairs
* ``<stem>.json`` - sidecar with the sample rate, label codes, SNR, seed
  and profile name

Raw recordings without a sidecar load too, provided the sample rate is
given explicitly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT = "zcrid-iq/1"
_DTYPE = np.dtype("<f4")


@dataclass
class SignalCapture:
    samples: np.ndarray
    sample_rate: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        if self.samples.ndim != 1:
            raise ValueError("capture samples must be one-dimensional")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def _stem(path) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix in (".iq", ".json") else p


def write_capture(path, capture: SignalCapture) -> Path:
    """Write ``<stem>.iq`` and ``<stem>.json``; returns the ``.iq`` path."""
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    iq = np.empty(2 * len(capture), dtype=_DTYPE)
    iq[0::2] = capture.samples.real
    iq[1::2] = capture.samples.imag
    iq_path = stem.with_suffix(".iq")
    try:
        iq.tofile(iq_path)
        meta = {"format": FORMAT, "sample_rate": capture.sample_rate, "n_samples": len(capture)}
        meta.update(capture.meta)
        stem.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write capture {iq_path}: {exc}") from exc
    return iq_path


def read_capture(path, sample_rate: float | None = None) -> SignalCapture:
    """Load a capture; ``sample_rate`` is required when there is no sidecar."""
    p = Path(path)
    stem = _stem(p)
    iq_path = p if p.suffix not in (".json", "") else stem.with_suffix(".iq")
    side = stem.with_suffix(".json")
    meta: dict = {}
    if side.exists():
        meta = json.loads(side.read_text())
    rate = sample_rate or meta.get("sample_rate")
    if not rate:
        raise ValueError(f"{iq_path}: no sidecar metadata, pass sample_rate explicitly")
    raw = np.fromfile(iq_path, dtype=_DTYPE)
    if raw.size % 2:
        raise ValueError(f"{iq_path}: odd number of float32 values, not I/Q pairs")
    samples = raw[0::2].astype(np.float64) + 1j * raw[1::2].astype(np.float64)
    for key in ("format", "sample_rate", "n_samples"):
        meta.pop(key, None)
    return SignalCapture(samples, float(rate), meta)
