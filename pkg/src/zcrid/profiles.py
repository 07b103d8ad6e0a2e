"""Drone protocol profiles and the class registry.

Class codes follow the dataset labels: ``T0000`` is background noise and
interference, ``T0001`` .. ``T1000`` are the eight drone types.  The
protocol numbers (grid sizes, ZC roots, frame periods, hop plans) are not
published per drone; the built-in values are plausible stand-ins with
pairwise distinct ZC roots, and every field can be overridden.

Two scales ship: ``full`` (100 MHz sampling, 2048/1024-point grids at
15 kHz spacing, 100 ms captures) and ``desk`` (10 MHz sampling,
256/128-point grids at 12 kHz spacing, 20 ms captures) which keeps the
grid-to-sample-rate ratios close enough that everything runs in seconds.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import ceil

from .zc import ZcSpec

CLASS_LABELS = (
    "T0000", "T0001", "T0010", "T0011", "T0100", "T0101", "T0110", "T0111", "T1000",
)
DRONE_LABELS = CLASS_LABELS[1:]
N_CLASSES = len(CLASS_LABELS)

DRONE_NAMES = {
    "T0000": "Background noise and interference",
    "T0001": "DJI Air 2S",
    "T0010": "DJI Mini 3 Pro",
    "T0011": "DJI Mavic Pro",
    "T0100": "DJI Mini 2",
    "T0101": "DJI Mavic 3",
    "T0110": "DJI MATRICE 300",
    "T0111": "DJI Phantom 4 Pro RTK",
    "T1000": "DJI MATRICE 30T",
}

# flight distance ranges in metres
DISTANCE_RANGES = {"D00": (20.0, 40.0), "D01": (40.0, 80.0), "D10": (80.0, 150.0)}


def distance_gain(label: str) -> float:
    """Amplitude factor ~ 1/d at the range midpoint, with D00 = 1."""
    lo, hi = DISTANCE_RANGES[label]
    ref = sum(DISTANCE_RANGES["D00"]) / 2.0
    return ref / ((lo + hi) / 2.0)


@dataclass(frozen=True)
class ZcPlacement:
    u: int
    length: int
    symbols: tuple[int, ...]

    @property
    def spec(self) -> ZcSpec:
        return ZcSpec(self.u, self.length)


@dataclass(frozen=True)
class FhssPlan:
    """Uplink hopping plan.

    ``duty`` is the fraction of each dwell during which the carrier is on;
    ``hop_bandwidth`` of 0 gives an unmodulated tone per hop.  ``power_db``
    is relative to the mean power of the downlink OFDM bursts.
    """

    dwell: float
    hop_bandwidth: float
    hops: tuple[float, ...]
    duty: float = 1.0
    power_db: float = 0.0


@dataclass(frozen=True)
class DroneProfile:
    type_label: str
    n_fft: int
    n_virtual: int
    bandwidth: float
    symbols_per_frame: int
    cp_plan: tuple[int, ...]
    zc_roots: tuple[ZcPlacement, ...]
    fhss: FhssPlan | None = None
    frame_period: float = 0.0
    distance_labels: tuple[str, ...] = ("D00",)
    name: str = ""

    def __post_init__(self):
        n = self.n_fft
        if n < 2 or n & (n - 1):
            raise ValueError(f"n_fft must be a power of 2 (got {n})")
        if not 0 < self.n_virtual < n:
            raise ValueError("n_virtual must satisfy 0 < n_virtual < n_fft")
        if len(self.cp_plan) != self.symbols_per_frame:
            raise ValueError("cp_plan length must equal symbols_per_frame")
        for zp in self.zc_roots:
            zp.spec  # validates root and length
            for s in zp.symbols:
                if not 0 <= s < self.symbols_per_frame:
                    raise ValueError(f"ZC symbol index {s} outside the frame")
        for d in self.distance_labels:
            if d not in DISTANCE_RANGES:
                raise ValueError(f"unknown distance label {d!r}")
        if self.frame_period and self.frame_period < self.frame_duration:
            raise ValueError("frame_period shorter than the frame itself")

    @property
    def occupied_bins(self) -> int:
        """Occupied subcarriers, DC included."""
        return self.n_fft - self.n_virtual

    @property
    def spacing(self) -> float:
        return self.bandwidth / self.n_fft

    @property
    def frame_length(self) -> int:
        """Frame length in native-rate samples."""
        return sum(self.n_fft + cp for cp in self.cp_plan)

    @property
    def frame_duration(self) -> float:
        return self.frame_length / self.bandwidth

    @property
    def period(self) -> float:
        return self.frame_period or self.frame_duration

    @property
    def primary_root(self) -> ZcPlacement:
        return self.zc_roots[0]


def lte_cp_plan(n_fft: int, symbols: int) -> tuple[int, ...]:
    """First symbol with extended CP (N/4), the rest normal (9N/128)."""
    return (n_fft // 4,) + (9 * n_fft // 128,) * (symbols - 1)


@dataclass(frozen=True)
class ScaleConfig:
    """Everything that differs between desk and full scale."""

    name: str
    sample_rate: float
    duration: float
    spacing: float
    grid_candidates: tuple[int, ...]
    stft_size: int
    image_size: tuple[int, int]
    segments: int          # U
    segment_length: int    # V
    welch_length: int = 4096

    @property
    def n_samples(self) -> int:
        return int(round(self.sample_rate * self.duration))

    @property
    def reduced_width(self) -> int:  # V1
        return self.segment_length // 5


SCALES = {
    "desk": ScaleConfig(
        name="desk", sample_rate=10e6, duration=0.02, spacing=12e3,
        grid_candidates=(64, 128, 256, 512), stft_size=256, image_size=(64, 64),
        segments=20, segment_length=5000,
    ),
    "full": ScaleConfig(
        name="full", sample_rate=100e6, duration=0.1, spacing=15e3,
        grid_candidates=(512, 1024, 2048, 4096), stft_size=1024, image_size=(224, 224),
        segments=20, segment_length=50000,
    ),
}

# type label -> (N, occupied, L_zc, primary u, secondary u, ZC symbol slots,
#                frame period s, hop count, hop bw fraction, dwell s, duty, fhss dB)
_TABLE = {
    "T0001": (256, 141, 139, 25, 71, (3, 10), 2.60e-3, 8, 0.020, 1.0e-3, 0.50, -3.0),
    "T0010": (256, 151, 149, 34, 101, (2, 9), 2.90e-3, 6, 0.030, 1.5e-3, 0.40, -4.0),
    "T0011": (128, 75, 73, 29, 50, (4, 11), 3.20e-3, 10, 0.015, 0.8e-3, 0.60, -2.0),
    "T0100": (256, 181, 179, 41, 120, (1, 8), 2.50e-3, 4, 0.040, 2.0e-3, 0.30, -5.0),
    "T0101": (256, 133, 131, 19, 88, (5, 12), 3.40e-3, 12, 0.010, 0.6e-3, 0.70, -1.0),
    "T0110": (128, 91, 89, 37, 61, (3, 13), 2.75e-3, 5, 0.035, 1.2e-3, 0.45, -3.5),
    "T0111": (256, 165, 163, 53, 110, (6, 0), 3.00e-3, 7, 0.025, 1.0e-3, 0.55, -2.5),
    "T1000": (128, 69, 67, 23, 44, (7, 14), 3.30e-3, 9, 0.018, 0.9e-3, 0.35, -4.5),
}

# full-scale grid sizes and ZC lengths (odd primes fitting the data bins)
_FULL_GRID = {
    "T0001": (2048, 1129, 1123),
    "T0010": (2048, 1201, 1193),
    "T0011": (1024, 601, 599),
    "T0100": (2048, 1449, 1447),
    "T0101": (2048, 1065, 1063),
    "T0110": (1024, 729, 727),
    "T0111": (2048, 1321, 1319),
    "T1000": (1024, 553, 547),
}

_MULTI_DISTANCE = ("T0001", "T0100")
SYMBOLS_PER_FRAME = 15


def _hop_set(count: int, half_span: float, offset_frac: float) -> tuple[float, ...]:
    step = 2.0 * half_span / count
    return tuple(round(-half_span + (k + offset_frac) * step, 3) for k in range(count))


def _build(scale: ScaleConfig) -> dict[str, DroneProfile]:
    out = {}
    for i, (label, row) in enumerate(_TABLE.items()):
        n, occ, lzc, u1, u2, slots, period, hops, bwf, dwell, duty, pdb = row
        if scale.name == "full":
            n, occ, lzc = _FULL_GRID[label]
            u2 = (u2 * 7) % lzc or 1
        bandwidth = n * scale.spacing
        half_span = 0.45 * scale.sample_rate
        fhss = FhssPlan(
            dwell=dwell,
            hop_bandwidth=bwf * scale.sample_rate,
            hops=_hop_set(hops, half_span - bwf * scale.sample_rate, 0.25 + 0.06 * i),
            duty=duty,
            power_db=pdb,
        )
        out[label] = DroneProfile(
            type_label=label,
            name=DRONE_NAMES[label],
            n_fft=n,
            n_virtual=n - occ,
            bandwidth=bandwidth,
            symbols_per_frame=SYMBOLS_PER_FRAME,
            cp_plan=lte_cp_plan(n, SYMBOLS_PER_FRAME),
            zc_roots=(ZcPlacement(u1, lzc, (slots[0],)), ZcPlacement(u2, lzc, (slots[1],))),
            fhss=fhss,
            frame_period=period,
            distance_labels=("D00", "D01", "D10") if label in _MULTI_DISTANCE else ("D00",),
        )
    return out


_CACHE: dict[str, dict[str, DroneProfile]] = {}


def registry(scale: str = "desk") -> dict[str, DroneProfile]:
    """Drone profiles keyed by type label, in class order (T0001 first)."""
    if scale not in SCALES:
        raise ValueError(f"unknown scale {scale!r}")
    if scale not in _CACHE:
        _CACHE[scale] = _build(SCALES[scale])
    return dict(_CACHE[scale])


def class_index(type_label: str) -> int:
    return CLASS_LABELS.index(type_label)


def profile_from_dict(d: dict) -> DroneProfile:
    """Inverse of ``dataclasses.asdict`` for config files."""
    d = dict(d)
    d["cp_plan"] = tuple(d["cp_plan"])
    d["zc_roots"] = tuple(
        ZcPlacement(int(z["u"]), int(z["length"]), tuple(z["symbols"])) for z in d["zc_roots"]
    )
    if d.get("fhss"):
        f = dict(d["fhss"])
        f["hops"] = tuple(f["hops"])
        d["fhss"] = FhssPlan(**f)
    d["distance_labels"] = tuple(d.get("distance_labels", ("D00",)))
    return DroneProfile(**d)


def simple_profile(
    n_fft: int,
    occupied: int,
    bandwidth: float,
    cp: int | tuple[int, ...] | None = None,
    symbols: int = SYMBOLS_PER_FRAME,
    zc: tuple[int, int] | None = None,
    zc_symbols: tuple[int, ...] = (0,),
    type_label: str = "TEST",
) -> DroneProfile:
    """OFDM-only profile for experiments and tests (no hopping uplink)."""
    if cp is None:
        cp_plan = lte_cp_plan(n_fft, symbols)
    elif isinstance(cp, int):
        cp_plan = (cp,) * symbols
    else:
        cp_plan = tuple(cp)
    roots = ()
    if zc is not None:
        roots = (ZcPlacement(zc[0], zc[1], tuple(zc_symbols)),)
    return DroneProfile(
        type_label=type_label,
        n_fft=n_fft,
        n_virtual=n_fft - occupied,
        bandwidth=bandwidth,
        symbols_per_frame=symbols,
        cp_plan=cp_plan,
        zc_roots=roots,
    )


def with_overrides(profile: DroneProfile, **kw) -> DroneProfile:
    return replace(profile, **kw)


def native_length(duration: float, bandwidth: float) -> int:
    return int(ceil(duration * bandwidth))
