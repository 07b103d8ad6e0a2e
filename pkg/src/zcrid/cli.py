"""Command-line entry point: ``zcrid synth|analyze|features|train|eval|bench``.

Every subcommand accepts ``--config FILE`` (JSON).  Command-line flags take
precedence over the file.  On failure a single JSON line
``{"error": <type>, "message": <text>}`` goes to stderr and the exit code
is nonzero.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import classify as clf
from . import harness as hn
from . import profiles as prof
from .capture import read_capture, write_capture
from .estimate import DEFAULT_CANDIDATES, WelchConfig, analyze
from .storage import write_columns_csv, write_pgm, write_stack_csv
from .synth import CaptureRequest, InterferenceSpec, ofdm_capture, synth_capture

log = logging.getLogger("zcrid")

CONFIG_KEYS = {"scale", "seed", "dataset", "capture", "analysis", "features",
               "algorithms", "alpha", "train"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValueError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ValueError(f"config {path} must hold a JSON object")
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return cfg


def _pick(flag, section: dict, key: str, default):
    if flag is not None:
        return flag
    return section.get(key, default)


def _emit(doc: dict) -> None:
    print(json.dumps(doc, sort_keys=True, default=hn._json_default))


def _train_configs(cfg: dict, scale: str) -> dict[str, clf.TrainConfig]:
    base = hn.train_configs(scale)
    for kind, over in cfg.get("train", {}).items():
        if kind not in base:
            raise ValueError(f"train section keys must be among {sorted(base)}")
        base[kind] = clf.TrainConfig(**{**base[kind].__dict__, **over})
    return base


# ---------------------------------------------------------------- synth

def cmd_synth(args, cfg) -> dict:
    scale = _pick(args.scale, cfg, "scale", "desk")
    seed = _pick(args.seed, cfg, "seed", 0)
    out = Path(args.out)
    cap = dict(cfg.get("capture", {}))
    if args.profile is not None:
        cap["profile"] = args.profile
    if "profile" in cap:
        label = cap["profile"]
        reg = prof.registry(scale)
        if label != "T0000" and label not in reg:
            raise ValueError(f"unknown profile {label!r}")
        sc = prof.SCALES[scale]
        snr = _pick(args.snr, cap, "snr_db", 10.0)
        cseed = _pick(args.seed, cap, "seed", seed)
        if args.downlink_only or cap.get("downlink_only", False):
            if label == "T0000":
                raise ValueError("background captures have no downlink")
            c = ofdm_capture(reg[label], sc.sample_rate, sc.n_samples, snr, cseed)
            c.meta.update(type_label=label, profile=reg[label].name)
            path = write_capture(out / f"{label}_downlink_{int(snr):+03d}_{cseed}", c)
            return {"command": "synth", "capture": str(path), "label": label}
        intf = cap.get("interference", True)
        req = CaptureRequest(
            profile=reg.get(label), sample_rate=sc.sample_rate, duration=sc.duration,
            snr_db=snr,
            distance=cap.get("distance", "D00"),
            interference=InterferenceSpec.for_scale(scale) if intf else InterferenceSpec.none(),
            seed=cseed,
        )
        res = synth_capture(req)
        path = write_capture(out / f"{res.label}_{int(req.snr_db):+03d}_{req.seed}", res.capture)
        return {"command": "synth", "capture": str(path), "label": res.label}
    ds = cfg.get("dataset", {})
    man = hn.generate_dataset(
        out, count=_pick(args.count, ds, "count", None), scale=scale, seed=seed,
        classes=tuple(ds.get("classes", prof.CLASS_LABELS)),
        snrs=tuple(ds.get("snrs", hn.SNR_GRID)),
        interference=ds.get("interference", True),
        persist=not args.no_persist and ds.get("persist", True),
    )
    return {"command": "synth", "manifest": str(out / "manifest.json"), "entries": len(man)}


# ---------------------------------------------------------------- analyze

def cmd_analyze(args, cfg) -> dict:
    cap = read_capture(args.capture, args.sample_rate)
    an = cfg.get("analysis", {})
    scale = cfg.get("scale")
    sc = prof.SCALES[scale] if scale else None
    welch = WelchConfig(segment_length=an.get("segment_length", sc.welch_length if sc else 4096))
    candidates = tuple(an.get("candidates", sc.grid_candidates if sc else DEFAULT_CANDIDATES))
    spacings = tuple(an.get("spacings", (sc.spacing,) if sc else (15e3,)))
    rep = analyze(cap, welch, candidates, spacings, an.get("n_up"))
    doc = {
        "command": "analyze",
        "capture": str(args.capture),
        "sample_rate": cap.sample_rate,
        "bandwidth_raw_hz": rep.band.bandwidth,
        "bandwidth_hz": rep.grid.bandwidth,
        "b_hat_v_hz": rep.grid.b_hat_v,
        "occupied_bins": rep.grid.occupied_bins,
        "n_fft_grid": rep.grid.n_fft,
        "n_virtual": rep.grid.n_virtual,
        "spacing_hz": rep.grid.spacing,
        "n_hat": rep.n_hat,
        "m_star": rep.ac.m_star,
        "n_up": rep.ac.n_up,
    }
    if args.out:
        out = Path(args.out)
        with np.errstate(divide="ignore"):
            psd_db = 10 * np.log10(rep.psd.values)
        write_columns_csv(out / "psd.csv", "freq_hz,psd,psd_db", rep.psd.freqs, rep.psd.values, psd_db)
        lags = np.arange(rep.ac.gamma.size)
        write_columns_csv(out / "autocorr.csv", "lag,gamma", lags, rep.ac.gamma)
        doc["outputs"] = [str(out / "psd.csv"), str(out / "autocorr.csv")]
    return doc


# ---------------------------------------------------------------- features

def _export_one(out: Path, stem: str, feats: dict, meta: dict) -> list[str]:
    written = []
    if "tfi" in feats:
        written.append(str(write_pgm(out / "tfi" / f"{stem}.pgm", feats["tfi"], meta)))
    if "zc" in feats:
        written.append(str(write_stack_csv(out / "zc" / f"{stem}.csv", feats["zc"], meta)))
    return written


def cmd_features(args, cfg) -> dict:
    fcfg = cfg.get("features", {})
    kinds = tuple(fcfg.get("kinds", hn.FEATURE_KINDS))
    bad = set(kinds) - set(hn.FEATURE_KINDS)
    if bad:
        raise ValueError(f"unknown feature kinds: {', '.join(sorted(bad))}")
    out = Path(args.out)
    src = Path(args.input)
    export = not args.no_export and fcfg.get("export", True)
    if args.manifest or src.suffix == ".json":
        man = hn.DatasetManifest.load(src)
        t0 = time.perf_counter()
        bundle = hn.extract_features(man, kinds, workers=_pick(args.workers, fcfg, "workers", 1))
        log.info("extracted %d entries in %.1f s", len(bundle), time.perf_counter() - t0)
        bundle_path = bundle.save(out / "features.npz")
        n_files = 0
        if export:
            fc = hn.FeatureConfig.for_scale(man.scale)
            for i, e in enumerate(man.entries):
                meta = {"source": e.path or f"manifest entry {i} (seed {e.seed})",
                        "manifest": str(src), "scale": man.scale, "label": e.type_label + e.distance_label,
                        "snr_db": e.snr_db, "stft": fc.stft.__dict__,
                        "reduction": {**fc.reduction.__dict__, "seed": e.seed}}
                n_files += len(_export_one(out, f"{i:05d}", {k: bundle.arrays[k][i] for k in kinds}, meta))
        return {"command": "features", "bundle": str(bundle_path), "entries": len(bundle),
                "exported_files": n_files}
    cap = read_capture(src)
    scale = cfg.get("scale", "desk")
    sc = prof.SCALES[scale]
    if cap.sample_rate != sc.sample_rate:
        raise ValueError(f"capture rate {cap.sample_rate:g} Hz does not match {scale} scale "
                         f"({sc.sample_rate:g} Hz)")
    seed = int(cap.meta.get("seed", cfg.get("seed", 0)))
    feats = hn.capture_features(cap, scale, seed, kinds)
    fc = hn.FeatureConfig.for_scale(scale)
    meta = {"source": str(src), "scale": scale, "stft": fc.stft.__dict__,
            "reduction": {**fc.reduction.__dict__, "seed": seed}}
    written = _export_one(out, src.stem, feats, meta)
    return {"command": "features", "outputs": written}


# ---------------------------------------------------------------- train / eval

def cmd_train(args, cfg) -> dict:
    bundle = hn.FeatureBundle.load(args.features)
    algorithm = args.algorithm or (cfg.get("algorithms") or [None])[0]
    if algorithm is None:
        raise ValueError("no algorithm given (use --algorithm or the config 'algorithms' list)")
    seed = _pick(args.seed, cfg, "seed", 0)
    alpha = _pick(args.alpha, cfg, "alpha", 0.5)
    t0 = time.perf_counter()
    trained = hn.train_algorithm(bundle, algorithm, seed, _train_configs(cfg, bundle.scale), alpha)
    paths = hn.save_trained(trained, args.out)
    return {"command": "train", "algorithm": algorithm, "files": [str(p) for p in paths],
            "seconds": round(time.perf_counter() - t0, 1), **trained.meta}


def cmd_eval(args, cfg) -> dict:
    bundle = hn.FeatureBundle.load(args.features)
    trained = hn.load_trained(args.model)
    report = hn.evaluate_trained(trained, bundle)
    files = hn.export_report(report, args.out)
    return {"command": "eval", "algorithm": report.algorithm,
            "average_accuracy": round(report.average_accuracy, 6), "files": [str(p) for p in files]}


def cmd_bench(args, cfg) -> dict:
    out = Path(args.out)
    scale = _pick(args.scale, cfg, "scale", "desk")
    seed = _pick(args.seed, cfg, "seed", 0)
    algorithms = args.algorithms.split(",") if args.algorithms else cfg.get("algorithms", list(hn.ALGORITHMS))
    for a in algorithms:
        if a not in hn.ALGORITHMS:
            raise ValueError(f"unknown algorithm {a!r}; choose from {', '.join(hn.ALGORITHMS)}")
    if args.features:
        bundle = hn.FeatureBundle.load(args.features)
    else:
        ds = cfg.get("dataset", {})
        man = hn.plan_dataset(_pick(args.count, ds, "count", None), scale, seed,
                              tuple(ds.get("classes", prof.CLASS_LABELS)),
                              tuple(ds.get("snrs", hn.SNR_GRID)), ds.get("interference", True))
        man.save(out / "manifest.json")
        workers = _pick(args.workers, cfg.get("features", {}), "workers", 1)
        t0 = time.perf_counter()
        bundle = hn.extract_features(man, workers=workers)
        log.info("features for %d captures in %.1f s", len(bundle), time.perf_counter() - t0)
        bundle.save(out / "features.npz")
    configs = _train_configs(cfg, bundle.scale)
    alpha = cfg.get("alpha", 0.5)
    summary = {}
    for a in algorithms:
        t0 = time.perf_counter()
        rep = hn.run_pipeline(bundle, a, seed, configs, alpha)
        hn.export_report(rep, out / a)
        summary[a] = rep.average_accuracy
        log.info("%s: average accuracy %.4f (%.0f s)", a, rep.average_accuracy, time.perf_counter() - t0)
    lines = ["algorithm,average_accuracy"] + [f"{a},{v:.6f}" for a, v in summary.items()]
    (out / "summary.csv").write_text("\n".join(lines) + "\n")
    return {"command": "bench", "summary": {a: round(v, 6) for a, v in summary.items()},
            "out": str(out)}


# ---------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="zcrid", description="Blind OFDM analysis and ZC-feature drone identification.")
    p.add_argument("--version", action="version", version=f"zcrid {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON configuration file")
        sp.set_defaults(fn=fn)
        return sp

    s = add("synth", cmd_synth, "synthesize one capture or a labelled dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--scale", choices=sorted(prof.SCALES))
    s.add_argument("--seed", type=int)
    s.add_argument("--count", type=int, help="captures per (class, SNR) cell")
    s.add_argument("--profile", help="single capture of this type label, e.g. T0010")
    s.add_argument("--snr", type=float, help="SNR in dB for a single capture")
    s.add_argument("--downlink-only", action="store_true",
                   help="OFDM downlink alone (no uplink, interference or distance loss)")
    s.add_argument("--no-persist", action="store_true", help="write the manifest only")

    a = add("analyze", cmd_analyze, "estimate bandwidth and subcarrier grid of a capture")
    a.add_argument("capture")
    a.add_argument("--sample-rate", type=float, help="required for raw I/Q without a sidecar")
    a.add_argument("--out", help="directory for psd.csv and autocorr.csv")

    f = add("features", cmd_features, "extract features from a capture or a manifest")
    f.add_argument("input", help="capture (.iq) or manifest.json")
    f.add_argument("--out", required=True)
    f.add_argument("--manifest", action="store_true", help="treat input as a manifest")
    f.add_argument("--workers", type=int)
    f.add_argument("--no-export", action="store_true", help="skip per-capture PGM/CSV files")

    t = add("train", cmd_train, "train one benchmark algorithm on a feature bundle")
    t.add_argument("features")
    t.add_argument("--out", required=True)
    t.add_argument("--algorithm", choices=hn.ALGORITHMS)
    t.add_argument("--seed", type=int)
    t.add_argument("--alpha", type=float)

    e = add("eval", cmd_eval, "evaluate a trained model on the test split")
    e.add_argument("features")
    e.add_argument("--model", required=True)
    e.add_argument("--out", required=True)

    b = add("bench", cmd_bench, "dataset, features, training and reports in one run")
    b.add_argument("--out", required=True)
    b.add_argument("--scale", choices=sorted(prof.SCALES))
    b.add_argument("--seed", type=int)
    b.add_argument("--count", type=int)
    b.add_argument("--workers", type=int)
    b.add_argument("--features", help="reuse an existing feature bundle")
    b.add_argument("--algorithms", help="comma-separated subset")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s", stream=sys.stderr)
        cfg = load_config(args.config)
        _emit(args.fn(args, cfg))
        return 0
    except (UsageError, ValueError, TypeError, KeyError, OSError, FloatingPointError) as exc:
        kind = "UsageError" if isinstance(exc, UsageError) else type(exc).__name__
        msg = str(exc.args[0]) if isinstance(exc, KeyError) and exc.args else str(exc)
        print(json.dumps({"error": kind, "message": msg}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
