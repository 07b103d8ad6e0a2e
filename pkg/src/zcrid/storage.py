"""Plain-file outputs: 8-bit PGM images, CSV stacks and JSON sidecars."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def write_sidecar(path, meta: dict) -> Path:
    """``<stem>.json`` next to ``path``."""
    side = Path(path).with_suffix(".json")
    try:
        side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write sidecar {side}: {exc}") from exc
    return side


def write_pgm(path, image: np.ndarray, meta: dict | None = None) -> Path:
    """Binary (P5) 8-bit greyscale; ``image`` values in [0, 1], rows top-down."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError("image must be 2-D")
    if not np.all(np.isfinite(img)) or img.min() < 0 or img.max() > 1:
        raise ValueError("image values must lie in [0, 1]")
    path = Path(path)
    data = np.round(img * 255).astype(np.uint8)
    h, w = data.shape
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(f"P5\n{w} {h}\n255\n".encode() + data.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write image {path}: {exc}") from exc
    if meta is not None:
        write_sidecar(path, meta)
    return path


def read_pgm(path) -> np.ndarray:
    """Inverse of :func:`write_pgm`; returns floats in [0, 1]."""
    raw = Path(path).read_bytes()
    # header: magic, width, height, maxval, each whitespace separated
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        fields.append(raw[pos:end].decode())
        pos = end
    if fields[0] != "P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval > 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos + 1)
    return data.reshape(h, w) / maxval


def write_stack_csv(path, stack: np.ndarray, meta: dict | None = None) -> Path:
    """One row per template, comma separated, full float precision."""
    s = np.asarray(stack, dtype=float)
    if s.ndim != 2:
        raise ValueError("stack must be 2-D")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(path, s, delimiter=",", fmt="%.9g")
    except OSError as exc:
        raise OSError(f"cannot write stack {path}: {exc}") from exc
    if meta is not None:
        write_sidecar(path, meta)
    return path


def read_stack_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def write_columns_csv(path, header: str, *columns) -> Path:
    """Equal-length numeric columns under a single header line."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(path, np.column_stack(columns), delimiter=",", fmt="%.9g",
                   header=header, comments="")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path
