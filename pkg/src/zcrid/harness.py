"""Dataset generation, feature extraction and the evaluation pipelines.

A manifest fully determines every capture: entries hold the request
parameters (label, distance, SNR, seed), so captures can be re-synthesized
on demand when they were not written to disk.
"""
from __future__ import annotations

import copy
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import classify as clf
from . import profiles as prof
from .capture import SignalCapture, read_capture, write_capture
from .estimate import autocorr
from .features import (ReductionConfig, StftConfig, extract_zc_stack,
                       registry_templates, stft_tfi)
from .synth import CaptureRequest, InterferenceSpec, synth_capture

SNR_GRID = tuple(range(-15, 16, 2))
ALGORITHMS = ("IQ", "NCPCS", "ZC", "TFI", "Fusion-PWA", "Fusion-FVA", "Fusion-FVC")
SPLITS = ("train", "val", "test")
MANIFEST_FORMAT = "zcrid-manifest/1"
BUNDLE_FORMAT = "zcrid-features/1"
FEATURE_KINDS = ("tfi", "zc", "iq", "ncpcs")
DESK_COUNT = 10
FULL_COUNT = 160


# ---------------------------------------------------------------- manifest

@dataclass
class ManifestEntry:
    type_label: str
    distance_label: str
    snr_db: float
    seed: int
    split: str
    path: str | None = None   # relative to the manifest directory


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    scale: str = "desk"
    seed: int = 0
    interference: bool = True
    root: Path | None = field(default=None, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.entries)

    def save(self, path) -> Path:
        path = Path(path)
        doc = {
            "format": MANIFEST_FORMAT,
            "scale": self.scale,
            "seed": self.seed,
            "interference": self.interference,
            "entries": [asdict(e) for e in self.entries],
        }
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        except OSError as exc:
            raise OSError(f"cannot write manifest {path}: {exc}") from exc
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        doc = json.loads(path.read_text())
        if doc.get("format") != MANIFEST_FORMAT:
            raise ValueError(f"{path}: not a {MANIFEST_FORMAT} document")
        return cls(
            entries=[ManifestEntry(**e) for e in doc["entries"]],
            scale=doc["scale"],
            seed=doc["seed"],
            interference=doc.get("interference", True),
            root=path.parent,
        )

    def split_indices(self, split: str) -> np.ndarray:
        return np.array([i for i, e in enumerate(self.entries) if e.split == split], dtype=int)


def split_counts(n: int) -> tuple[int, int, int]:
    """(train, val, test) sizes for a 9:1:1 split of ``n`` items."""
    if n < 1:
        raise ValueError("count must be >= 1")
    train = round(9 * n / 11)
    test = round(n / 11)
    return train, n - train - test, test


def _cell_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def capture_seed(seed: int, class_idx: int, snr_idx: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, class_idx, snr_idx, k]).generate_state(1)[0])


def plan_dataset(count: int | None = None, scale: str = "desk", seed: int = 0,
                 classes=prof.CLASS_LABELS, snrs=SNR_GRID, interference: bool = True) -> DatasetManifest:
    """Manifest for ``count`` captures per (class, SNR) cell, splits assigned.

    Distance labels are drawn uniformly from each profile's allowed set.
    """
    if count is None:
        count = FULL_COUNT if scale == "full" else DESK_COUNT
    if count < 1:
        raise ValueError("count must be >= 1")
    reg = prof.registry(scale)
    n_train, n_val, _ = split_counts(count)
    entries = []
    for label in classes:
        ci = prof.class_index(label)
        dists = reg[label].distance_labels if label in reg else ("D00",)
        for si, snr in enumerate(snrs):
            rng = _cell_rng(seed, ci, si)
            order = rng.permutation(count)
            dist_pick = rng.integers(0, len(dists), size=count)
            for k in range(count):
                rank = int(np.flatnonzero(order == k)[0])
                split = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
                entries.append(ManifestEntry(label, dists[dist_pick[k]], float(snr),
                                             capture_seed(seed, ci, si, k), split))
    return DatasetManifest(entries, scale, seed, interference)


def entry_request(entry: ManifestEntry, scale: str, interference: bool = True) -> CaptureRequest:
    sc = prof.SCALES[scale]
    profile = prof.registry(scale).get(entry.type_label)
    return CaptureRequest(
        profile=profile,
        sample_rate=sc.sample_rate,
        duration=sc.duration,
        snr_db=entry.snr_db,
        distance=entry.distance_label,
        interference=InterferenceSpec.for_scale(scale) if interference else InterferenceSpec.none(),
        seed=entry.seed,
    )


def load_entry(manifest: DatasetManifest, i: int) -> SignalCapture:
    """Read entry ``i`` from disk if it was persisted, else re-synthesize it."""
    e = manifest.entries[i]
    if e.path is not None:
        root = manifest.root or Path(".")
        return read_capture(root / e.path)
    return synth_capture(entry_request(e, manifest.scale, manifest.interference)).capture


def generate_dataset(out_dir, count: int | None = None, scale: str = "desk", seed: int = 0,
                     classes=prof.CLASS_LABELS, snrs=SNR_GRID, interference: bool = True,
                     persist: bool = True) -> DatasetManifest:
    """Plan a dataset, synthesize every capture and write it under ``out_dir``.

    With ``persist=False`` only the manifest is written; captures are then
    regenerated from their seeds when features are extracted.
    """
    out_dir = Path(out_dir)
    man = plan_dataset(count, scale, seed, classes, snrs, interference)
    man.root = out_dir
    if persist:
        for i, e in enumerate(man.entries):
            rel = f"captures/{e.type_label}_{e.distance_label}_{int(e.snr_db):+03d}_{i:05d}"
            res = synth_capture(entry_request(e, scale, interference))
            write_capture(out_dir / rel, res.capture)
            e.path = rel + ".iq"
    man.save(out_dir / "manifest.json")
    return man


# ---------------------------------------------------------------- features

@dataclass(frozen=True)
class FeatureConfig:
    stft: StftConfig
    reduction: ReductionConfig

    @classmethod
    def for_scale(cls, scale: str) -> "FeatureConfig":
        sc = prof.SCALES[scale]
        return cls(
            StftConfig(fft_size=sc.stft_size, image_size=sc.image_size),
            ReductionConfig(segments=sc.segments, segment_length=sc.segment_length),
        )


@lru_cache(maxsize=4)
def _templates(scale: str) -> tuple[np.ndarray, ...]:
    reg = prof.registry(scale)
    return tuple(registry_templates([reg[k] for k in prof.DRONE_LABELS], prof.SCALES[scale].sample_rate))


def iq_feature(capture: SignalCapture, width: int) -> np.ndarray:
    """Every k-th sample (k = len // width), as (2, width) real/imag rows."""
    x = capture.samples
    step = max(1, x.size // width)
    d = x[::step][:width]
    if d.size < width:
        d = np.pad(d, (0, width - d.size))
    rms = np.sqrt(np.mean(np.abs(x) ** 2))
    d = d / rms if rms > 0 else d
    return np.stack([d.real, d.imag]).astype(np.float32)


def ncpcs_feature(capture: SignalCapture, width: int) -> np.ndarray:
    """Autocorrelation magnitude over lags 0..2*width-1, normalized by the
    zero-lag value, max-pooled in pairs to (1, width)."""
    n_lags = 2 * width
    n_up = len(capture) - n_lags
    if n_up < 1:
        raise ValueError("capture too short for the NCPCS lag span")
    g = autocorr(capture, n_up).gamma
    g = g / g[0] if g[0] > 0 else g
    return g.reshape(width, 2).max(axis=1)[None].astype(np.float32)


def capture_features(capture: SignalCapture, scale: str, seed: int, kinds=FEATURE_KINDS) -> dict:
    fc = FeatureConfig.for_scale(scale)
    out = {}
    if "tfi" in kinds:
        out["tfi"] = stft_tfi(capture, fc.stft).image.astype(np.float32)
    width = fc.reduction.width
    if "zc" in kinds:
        red = ReductionConfig(fc.reduction.segments, fc.reduction.segment_length, seed=seed)
        out["zc"] = extract_zc_stack(capture, _templates(scale), red).stack.astype(np.float32)
    if "iq" in kinds:
        out["iq"] = iq_feature(capture, width)
    if "ncpcs" in kinds:
        out["ncpcs"] = ncpcs_feature(capture, width)
    return out


@dataclass
class FeatureBundle:
    """Per-entry feature arrays aligned with a manifest."""

    arrays: dict[str, np.ndarray]
    labels: np.ndarray
    snr_db: np.ndarray
    split: np.ndarray
    scale: str = "desk"

    def __len__(self) -> int:
        return len(self.labels)

    def save(self, path) -> Path:
        path = Path(path)
        meta = json.dumps({"format": BUNDLE_FORMAT, "scale": self.scale})
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "wb") as fh:
                np.savez(fh, __meta__=np.array(meta), labels=self.labels, snr_db=self.snr_db,
                         split=self.split.astype("U5"),
                         **{f"x_{k}": v for k, v in self.arrays.items()})
        except OSError as exc:
            raise OSError(f"cannot write feature bundle {path}: {exc}") from exc
        return path

    @classmethod
    def load(cls, path) -> "FeatureBundle":
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["__meta__"]))
            if meta.get("format") != BUNDLE_FORMAT:
                raise ValueError(f"{path}: not a {BUNDLE_FORMAT} file")
            arrays = {k[2:]: z[k] for k in z.files if k.startswith("x_")}
            return cls(arrays, z["labels"], z["snr_db"], z["split"], meta["scale"])

    def dataset(self, split: str, kinds) -> clf.Dataset:
        idx = np.flatnonzero(self.split == split)
        return clf.Dataset({k: model_input(k, self.arrays[k][idx]) for k in kinds}, self.labels[idx])


def _entry_features(args):
    manifest, i, kinds = args
    e = manifest.entries[i]
    return capture_features(load_entry(manifest, i), manifest.scale, e.seed, kinds)


def extract_features(manifest: DatasetManifest, kinds=FEATURE_KINDS, workers: int = 1) -> FeatureBundle:
    """Features for every manifest entry, in entry order.

    ``workers > 1`` fans extraction out over processes; results are
    identical because each entry is a pure function of its seed.
    """
    jobs = [(manifest, i, tuple(kinds)) for i in range(len(manifest))]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            feats = list(pool.map(_entry_features, jobs, chunksize=8))
    else:
        feats = [_entry_features(j) for j in jobs]
    arrays = {k: np.stack([f[k] for f in feats]) for k in kinds}
    labels = np.array([prof.class_index(e.type_label) for e in manifest.entries], dtype=int)
    snr = np.array([e.snr_db for e in manifest.entries], dtype=float)
    split = np.array([e.split for e in manifest.entries])
    return FeatureBundle(arrays, labels, snr, split, manifest.scale)


def model_input(kind: str, x: np.ndarray) -> np.ndarray:
    """Network input from stored features of one kind (batched)."""
    if kind == "tfi":
        return clf.tfi_input(x)
    if kind == "zc":
        return clf.log_ratio_input(x)
    return np.asarray(x, dtype=np.float32)


# ---------------------------------------------------------------- pipelines

@dataclass
class EvalReport:
    algorithm: str
    accuracy_by_snr: dict[float, float]
    confusion: np.ndarray
    average_accuracy: float
    meta: dict = field(default_factory=dict)


# Desk-scale training settings: the reference learning rate is too slow for
# a ~1.2k-sample training split, so these use larger steps and small batches.
DESK_TRAIN = {
    "sequence": clf.TrainConfig(learning_rate=1e-3, batch_size=32, epochs=40),
    "tfi": clf.TrainConfig(learning_rate=1e-3, batch_size=32, epochs=40),
    "fusion": clf.TrainConfig(learning_rate=1e-3, batch_size=32, epochs=20),
}

_SINGLE = {"IQ": "iq", "NCPCS": "ncpcs", "ZC": "zc", "TFI": "tfi"}


def train_configs(scale: str) -> dict[str, clf.TrainConfig]:
    if scale == "desk":
        return dict(DESK_TRAIN)
    return {k: clf.TrainConfig.defaults(k) for k in ("sequence", "tfi", "fusion")}


def _shape(bundle: FeatureBundle, kind: str) -> tuple[int, ...]:
    x = bundle.arrays[kind]
    return (1, *x.shape[1:]) if kind == "tfi" else tuple(x.shape[1:])


def _fit(bundle, kinds, mode, cfg: clf.TrainConfig, seed: int):
    mcfg = clf.ModelConfig(branches=tuple((k, _shape(bundle, k)) for k in kinds), mode=mode, seed=seed)
    model = clf.Classifier(mcfg)
    res = clf.train(model, bundle.dataset("train", kinds), cfg, val=bundle.dataset("val", kinds))
    return model, res


def _fit_fusion(bundle, mode, configs, seed: int, warm_start: bool):
    """FVA/FVC model; with ``warm_start`` both encoders start from single-branch
    models trained exactly as the TFI and ZC pipelines, then everything is
    fine-tuned jointly."""
    kinds = ("tfi", "zc")
    if not warm_start:
        return _fit(bundle, kinds, mode, configs["fusion"], seed)
    m_tfi, _ = _fit(bundle, ("tfi",), "single", configs["tfi"], seed)
    m_zc, _ = _fit(bundle, ("zc",), "single", configs["sequence"], seed)
    mcfg = clf.ModelConfig(branches=tuple((k, _shape(bundle, k)) for k in kinds), mode=mode, seed=seed)
    model = clf.Classifier(mcfg)
    model.encoders["tfi"] = copy.deepcopy(m_tfi.encoders["tfi"])
    model.encoders["zc"] = copy.deepcopy(m_zc.encoders["zc"])
    res = clf.train(model, bundle.dataset("train", kinds), configs["fusion"],
                    val=bundle.dataset("val", kinds))
    return model, res


def evaluate(predictions: np.ndarray, labels: np.ndarray, snr_db: np.ndarray, algorithm: str,
             snrs=None, n_classes: int = prof.N_CLASSES, meta=None) -> EvalReport:
    snrs = sorted(set(snr_db.tolist())) if snrs is None else list(snrs)
    acc = {}
    for s in snrs:
        m = snr_db == s
        acc[float(s)] = float(np.mean(predictions[m] == labels[m])) if m.any() else float("nan")
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (labels, predictions), 1)
    avg = float(np.mean([v for v in acc.values()]))
    return EvalReport(algorithm, acc, conf, avg, dict(meta or {}))


@dataclass
class TrainedAlgorithm:
    """A fitted benchmark algorithm: one classifier, or a PWA pair."""

    algorithm: str
    model: clf.Classifier | clf.PwaEnsemble
    kinds: tuple[str, ...]
    meta: dict = field(default_factory=dict)

    def predict(self, bundle: FeatureBundle, idx=None) -> np.ndarray:
        idx = np.arange(len(bundle)) if idx is None else np.asarray(idx)
        x = {k: model_input(k, bundle.arrays[k][idx]) for k in self.kinds}
        return self.model.predict_proba(x).argmax(axis=1)


def train_algorithm(bundle: FeatureBundle, algorithm: str, seed: int = 0,
                    configs: dict[str, clf.TrainConfig] | None = None,
                    alpha: float = 0.5, warm_start: bool = True) -> TrainedAlgorithm:
    """Fit on the train split with best-validation checkpoint selection."""
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; choose from {', '.join(ALGORITHMS)}")
    configs = configs or train_configs(bundle.scale)
    meta = {"seed": seed}
    if algorithm in _SINGLE:
        kind = _SINGLE[algorithm]
        cfg = configs["tfi" if kind == "tfi" else "sequence"]
        model, res = _fit(bundle, (kind,), "single", cfg, seed)
        kinds = (kind,)
        meta.update(best_epoch=res.best_epoch, final_loss=res.losses[-1])
    elif algorithm == "Fusion-PWA":
        m_tfi, r1 = _fit(bundle, ("tfi",), "single", configs["tfi"], seed)
        m_zc, r2 = _fit(bundle, ("zc",), "single", configs["sequence"], seed)
        model = clf.PwaEnsemble(m_tfi, m_zc, alpha)
        kinds = ("tfi", "zc")
        meta.update(alpha=alpha, best_epoch=[r1.best_epoch, r2.best_epoch])
    else:
        kinds = ("tfi", "zc")
        model, res = _fit_fusion(bundle, algorithm.split("-")[1], configs, seed, warm_start)
        meta.update(best_epoch=res.best_epoch, final_loss=res.losses[-1], warm_start=warm_start)
    return TrainedAlgorithm(algorithm, model, kinds, meta)


def evaluate_trained(trained: TrainedAlgorithm, bundle: FeatureBundle) -> EvalReport:
    test = np.flatnonzero(bundle.split == "test")
    if test.size == 0:
        raise ValueError("no test entries")
    pred = trained.predict(bundle, test)
    return evaluate(pred, bundle.labels[test], bundle.snr_db[test], trained.algorithm,
                    snrs=sorted(set(bundle.snr_db.tolist())), meta=trained.meta)


def run_pipeline(bundle: FeatureBundle, algorithm: str, seed: int = 0,
                 configs: dict[str, clf.TrainConfig] | None = None, alpha: float = 0.5,
                 return_model: bool = False, warm_start: bool = True):
    """Train on the train split, select on val, report on the test split."""
    trained = train_algorithm(bundle, algorithm, seed, configs, alpha, warm_start)
    report = evaluate_trained(trained, bundle)
    return (report, trained) if return_model else report


def save_trained(trained: TrainedAlgorithm, out_dir) -> list[Path]:
    """Checkpoint(s) plus ``algorithm.json`` describing how to reassemble them."""
    out_dir = Path(out_dir)
    if isinstance(trained.model, clf.PwaEnsemble):
        parts = {"tfi": trained.model.tfi_model, "zc": trained.model.zc_model}
    else:
        parts = {"model": trained.model}
    paths = [clf.save_model(out_dir / f"{name}.npz", m) for name, m in parts.items()]
    doc = {"algorithm": trained.algorithm, "kinds": list(trained.kinds),
           "parts": sorted(parts), "meta": trained.meta}
    if isinstance(trained.model, clf.PwaEnsemble):
        doc["alpha"] = trained.model.alpha
    side = out_dir / "algorithm.json"
    try:
        side.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {side}: {exc}") from exc
    return [*paths, side]


def load_trained(model_dir) -> TrainedAlgorithm:
    model_dir = Path(model_dir)
    side = model_dir / "algorithm.json"
    if not side.exists():
        raise FileNotFoundError(f"{side} not found; not a trained-model directory")
    doc = json.loads(side.read_text())
    if doc["algorithm"] == "Fusion-PWA":
        m_tfi, _ = clf.load_model(model_dir / "tfi.npz")
        m_zc, _ = clf.load_model(model_dir / "zc.npz")
        model = clf.PwaEnsemble(m_tfi, m_zc, doc["alpha"])
    else:
        model, _ = clf.load_model(model_dir / "model.npz")
    return TrainedAlgorithm(doc["algorithm"], model, tuple(doc["kinds"]), doc["meta"])


# ---------------------------------------------------------------- export

def _fmt(v: float) -> str:
    return f"{v:.6f}"


def export_report(report: EvalReport, out_dir) -> list[Path]:
    """accuracy.csv, confusion.csv and report.json; byte-stable."""
    out_dir = Path(out_dir)
    acc_lines = ["snr_db,accuracy"] + [
        f"{s:g},{_fmt(a)}" for s, a in sorted(report.accuracy_by_snr.items())
    ]
    conf_lines = [",".join(str(int(v)) for v in row) for row in report.confusion]
    doc = {
        "algorithm": report.algorithm,
        "average_accuracy": _fmt(report.average_accuracy),
        "accuracy_by_snr": {f"{s:g}": _fmt(a) for s, a in sorted(report.accuracy_by_snr.items())},
        "class_labels": list(prof.CLASS_LABELS),
        "n_test": int(report.confusion.sum()),
        "meta": report.meta,
    }
    files = {
        "accuracy.csv": "\n".join(acc_lines) + "\n",
        "confusion.csv": "\n".join(conf_lines) + "\n",
        "report.json": json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n",
    }
    written = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            p = out_dir / name
            p.write_bytes(text.encode())
            written.append(p)
    except OSError as exc:
        raise OSError(f"cannot write report to {out_dir}: {exc}") from exc
    return written


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")
