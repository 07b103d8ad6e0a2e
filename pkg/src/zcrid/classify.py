"""Two-branch drone classifier: encoders, fusion, loss, training.

Feature kinds and their encoders:

* ``tfi`` - (1, H, W) image, 2-D convolutional encoder
* ``zc``, ``iq``, ``ncpcs`` - (C, W) multi-channel sequences, 1-D encoder

Both encoders end in a dense layer of width ``d`` so their outputs can be
added (FVA) or concatenated (FVC).  PWA is an inference-time ensemble of
two single-branch models.
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .nn import (AvgPool2D, Conv1D, Conv2D, Dense, Flatten, MaxPool1D,
                 Sequential, activation, log_softmax, softmax)
from .profiles import N_CLASSES

IMAGE_KINDS = ("tfi",)
SEQUENCE_KINDS = ("zc", "iq", "ncpcs")
MODES = ("single", "FVA", "FVC")
CHECKPOINT_FORMAT = "zcrid-model/1"


@dataclass(frozen=True)
class Prediction:
    probabilities: np.ndarray
    predicted_class: int

    @classmethod
    def of(cls, probabilities) -> "Prediction":
        p = np.asarray(probabilities, dtype=float)
        return cls(p, int(np.argmax(p)))


@dataclass(frozen=True)
class FusionConfig:
    mode: str = "FVC"    # PWA, FVA or FVC
    alpha: float = 0.5   # PWA weight on the TFI branch

    def __post_init__(self):
        if self.mode not in ("PWA", "FVA", "FVC"):
            raise ValueError(f"unknown fusion mode {self.mode!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


# ---------------------------------------------------------------- fusion

def _check_distribution(p, name):
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or not np.allclose(p.sum(axis=-1), 1.0, atol=1e-9):
        raise ValueError(f"{name} is not a probability distribution")
    return p


def fuse_pwa(p_tfi, p_zc, alpha: float = 0.5):
    """alpha * P_TFI + (1 - alpha) * P_ZC; accepts arrays or Predictions."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    wrap = isinstance(p_tfi, Prediction)
    a = _check_distribution(p_tfi.probabilities if wrap else p_tfi, "p_tfi")
    b = _check_distribution(p_zc.probabilities if isinstance(p_zc, Prediction) else p_zc, "p_zc")
    if a.shape != b.shape:
        raise ValueError("distribution shapes differ")
    if alpha == 1.0:
        out = a.copy()
    elif alpha == 0.0:
        out = b.copy()
    else:
        out = alpha * a + (1.0 - alpha) * b
    return Prediction.of(out) if wrap else out


def fuse_fva(f_tfi, f_zc) -> np.ndarray:
    a, b = np.asarray(f_tfi), np.asarray(f_zc)
    if a.shape != b.shape:
        raise ValueError(f"feature dimension mismatch: {a.shape} vs {b.shape}")
    return a + b


def fuse_fvc(f_tfi, f_zc) -> np.ndarray:
    """Concatenate along the feature axis, TFI first."""
    return np.concatenate([np.asarray(f_tfi), np.asarray(f_zc)], axis=-1)


# ---------------------------------------------------------------- loss

def softmax_xent(logits, label):
    """Softmax probabilities and cross-entropy against one-hot ``label``.

    Works on a single vector or a batch (rows); the batch loss is the mean.
    Returns ``(probabilities, loss)``.
    """
    z = np.asarray(logits, dtype=float)
    y = np.asarray(label, dtype=float)
    if y.shape != z.shape:
        raise ValueError("label shape differs from logits")
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=-1) == 1)):
        raise ValueError("label is not one-hot")
    logp = log_softmax(z)
    loss = -(y * logp).sum(axis=-1)
    return np.exp(logp), float(loss.mean())


def one_hot(labels, n_classes: int = N_CLASSES) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


# ---------------------------------------------------------------- encoders

def image_encoder(shape, d, rng, act="relu", dtype=np.float32) -> Sequential:
    """conv3x3(8) -> pool2 -> conv3x3(16) -> pool4 -> dense(d)."""
    c, h, w = shape
    if h % 8 or w % 8:
        raise ValueError("image sides must be multiples of 8")
    return Sequential([
        Conv2D(c, 8, 3, rng, dtype=dtype), activation(act), AvgPool2D(2),
        Conv2D(8, 16, 3, rng, dtype=dtype), activation(act), AvgPool2D(4),
        Flatten(), Dense(16 * (h // 8) * (w // 8), d, rng, dtype=dtype), activation(act),
    ])


def sequence_encoder(shape, d, rng, act="relu", dtype=np.float32, channels=32, windows=1) -> Sequential:
    """conv1d(channels, k=9) -> max over ``windows`` blocks -> dense(d).

    With one window the pooling is a global max: a correlation peak counts
    the same wherever it falls in the segment.  The 9-tap convolution still
    reads local peak shape, so permuting input columns changes the output.
    """
    c, w = shape
    if w < windows:
        raise ValueError("sequence shorter than the pooling layout")
    return Sequential([
        Conv1D(c, channels, 9, rng, dtype=dtype), activation(act), MaxPool1D(w // windows),
        Flatten(), Dense(channels * windows, d, rng, dtype=dtype), activation(act),
    ])


@dataclass(frozen=True)
class ModelConfig:
    """``branches`` maps feature kind -> input shape (without batch axis)."""

    branches: tuple[tuple[str, tuple[int, ...]], ...]
    mode: str = "single"
    d: int = 64
    n_classes: int = N_CLASSES
    activation: str = "relu"
    seed: int = 0
    seq_channels: int = 32
    seq_windows: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown model mode {self.mode!r}")
        kinds = [k for k, _ in self.branches]
        if self.mode == "single" and len(kinds) != 1:
            raise ValueError("single mode takes exactly one branch")
        if self.mode in ("FVA", "FVC") and len(kinds) != 2:
            raise ValueError("fusion modes take exactly two branches")
        for k in kinds:
            if k not in IMAGE_KINDS + SEQUENCE_KINDS:
                raise ValueError(f"unknown feature kind {k!r}")

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(k for k, _ in self.branches)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["branches"] = [[k, list(s)] for k, s in self.branches]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["branches"] = tuple((k, tuple(s)) for k, s in d["branches"])
        return cls(**d)


class Classifier:
    """Encoders, optional fusion, and a dense softmax head."""

    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.encoders: dict[str, Sequential] = {}
        for kind, shape in cfg.branches:
            if kind in IMAGE_KINDS:
                enc = image_encoder(shape, cfg.d, rng, cfg.activation, dtype)
            else:
                enc = sequence_encoder(shape, cfg.d, rng, cfg.activation, dtype,
                                       cfg.seq_channels, cfg.seq_windows)
            self.encoders[kind] = enc
        width = 2 * cfg.d if cfg.mode == "FVC" else cfg.d
        self.head = Dense(width, cfg.n_classes, rng, dtype=dtype)

    @property
    def dtype(self):
        return self.head.params["W"].dtype

    def named_params(self):
        for kind, enc in self.encoders.items():
            yield from enc.named_params(f"{kind}/")
        for key in self.head.params:
            yield f"head/{key}", self.head, key

    def astype(self, dtype) -> "Classifier":
        for enc in self.encoders.values():
            enc.astype(dtype)
        self.head.astype(dtype)
        return self

    def _check(self, inputs):
        for kind, shape in self.cfg.branches:
            if kind not in inputs:
                raise ValueError(f"missing input {kind!r}")
            x = inputs[kind]
            if tuple(x.shape[1:]) != tuple(shape):
                raise ValueError(f"{kind} input shape {tuple(x.shape[1:])} != {tuple(shape)}")

    def encode(self, inputs) -> dict[str, np.ndarray]:
        self._check(inputs)
        return {k: self.encoders[k].forward(np.asarray(inputs[k], dtype=self.dtype)) for k in self.cfg.kinds}

    def fuse(self, feats) -> np.ndarray:
        kinds = self.cfg.kinds
        if self.cfg.mode == "single":
            return feats[kinds[0]]
        if self.cfg.mode == "FVA":
            return fuse_fva(feats[kinds[0]], feats[kinds[1]])
        return fuse_fvc(feats[kinds[0]], feats[kinds[1]])

    def forward(self, inputs) -> np.ndarray:
        return self.head.forward(self.fuse(self.encode(inputs)))

    def backward(self, dlogits) -> None:
        dfused = self.head.backward(dlogits)
        kinds = self.cfg.kinds
        if self.cfg.mode == "FVC":
            d = self.cfg.d
            parts = {kinds[0]: dfused[:, :d], kinds[1]: dfused[:, d:]}
        else:
            parts = {k: dfused for k in kinds}
        for k in kinds:
            self.encoders[k].backward(parts[k])

    def loss_and_grad(self, inputs, labels) -> float:
        logits = self.forward(inputs)
        y = one_hot(labels, self.cfg.n_classes).astype(logits.dtype)
        p, loss = softmax_xent(logits, y)
        self.backward(((p - y) / len(y)).astype(logits.dtype))
        return loss

    def predict_proba(self, inputs, batch: int = 256) -> np.ndarray:
        n = len(next(iter(inputs.values())))
        out = [softmax(self.forward({k: v[i: i + batch] for k, v in inputs.items()}).astype(float))
               for i in range(0, n, batch)]
        return np.concatenate(out) if out else np.zeros((0, self.cfg.n_classes))


class PwaEnsemble:
    """Probability-weighted addition of two independently trained models."""

    def __init__(self, tfi_model: Classifier, zc_model: Classifier, alpha: float = 0.5):
        FusionConfig("PWA", alpha)
        self.tfi_model, self.zc_model, self.alpha = tfi_model, zc_model, alpha

    def predict_proba(self, inputs, batch: int = 256) -> np.ndarray:
        return fuse_pwa(self.tfi_model.predict_proba(inputs, batch),
                        self.zc_model.predict_proba(inputs, batch), self.alpha)


# ---------------------------------------------------------------- input shaping

def tfi_input(images) -> np.ndarray:
    """(B, H, W) images in [0, 1] -> (B, 1, H, W) float32."""
    x = np.asarray(images, dtype=np.float32)
    return x[:, None] if x.ndim == 3 else x[None, None]


def log_ratio_input(stacks) -> np.ndarray:
    """log(stack / median(stack)) per sample; scale-free peak contrast."""
    s = np.asarray(stacks, dtype=float)
    if s.ndim == 2:
        s = s[None]
    med = np.median(s.reshape(len(s), -1), axis=1)[:, None, None]
    tiny = np.finfo(float).tiny
    out = np.log(np.maximum(s, tiny) / np.maximum(med, tiny))
    out[~np.isfinite(out)] = 0.0
    out[np.broadcast_to(med <= tiny, out.shape)] = 0.0
    return out.astype(np.float32)


# ---------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 128
    epochs: int = 30
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @classmethod
    def defaults(cls, kind: str, **overrides) -> "TrainConfig":
        """Reference settings for ``sequence``, ``tfi`` or ``fusion`` models."""
        base = {"sequence": (512, 300), "tfi": (256, 30), "fusion": (128, 30)}
        if kind not in base:
            raise ValueError(f"unknown model kind {kind!r}")
        b, e = base[kind]
        return cls(**{"batch_size": b, "epochs": e, **overrides})


@dataclass
class Dataset:
    inputs: dict[str, np.ndarray]
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        for k, v in self.inputs.items():
            if len(v) != len(self.labels):
                raise ValueError(f"input {k!r} has {len(v)} rows for {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        return Dataset({k: v[idx] for k, v in self.inputs.items()}, self.labels[idx])


@dataclass
class TrainResult:
    model: Classifier
    losses: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = -1


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, model: Classifier) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, layer, key in model.named_params():
            g = layer.grads[key]
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            layer.params[key] -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(g.dtype)


class Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, model: Classifier) -> None:
        for _, layer, key in model.named_params():
            layer.params[key] -= (self.lr * layer.grads[key]).astype(layer.params[key].dtype)


def accuracy(model, data: Dataset) -> float:
    if len(data) == 0:
        return float("nan")
    return float(np.mean(model.predict_proba(data.inputs).argmax(axis=1) == data.labels))


def train(model: Classifier, data: Dataset, cfg: TrainConfig, val: Dataset | None = None,
          on_epoch=None) -> TrainResult:
    """Mini-batch training on the cross-entropy loss.

    When ``val`` is given the weights of the epoch with the best
    validation accuracy are restored at the end (earliest epoch on ties).
    ``on_epoch(epoch, model, loss)`` is called after every epoch.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    missing = set(model.cfg.kinds) - set(data.inputs)
    if missing:
        raise ValueError(f"dataset lacks inputs {sorted(missing)}")
    opt = Adam(cfg.learning_rate) if cfg.optimizer == "adam" else Sgd(cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult(model)
    best, best_state = -1.0, None
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        total = 0.0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i: i + cfg.batch_size]
            batch = data.subset(idx)
            loss = model.loss_and_grad(batch.inputs, batch.labels)
            if not np.isfinite(loss):
                raise FloatingPointError(f"divergence: non-finite loss at epoch {epoch}, batch {i // cfg.batch_size}")
            opt.step(model)
            total += loss * len(idx)
        result.losses.append(total / len(data))
        if val is not None and len(val):
            acc = accuracy(model, val)
            result.val_accuracy.append(acc)
            if acc > best:
                best, best_state, result.best_epoch = acc, _state(model), epoch
        if on_epoch is not None:
            on_epoch(epoch, model, result.losses[-1])
    if best_state is not None:
        _load_state(model, best_state)
    else:
        result.best_epoch = cfg.epochs - 1
    return result


def _state(model: Classifier) -> dict[str, np.ndarray]:
    return {name: layer.params[key].copy() for name, layer, key in model.named_params()}


def _load_state(model: Classifier, state) -> None:
    for name, layer, key in model.named_params():
        if state[name].shape != layer.params[key].shape:
            raise ValueError(f"shape mismatch for {name}")
        layer.params[key] = state[name].astype(layer.params[key].dtype).copy()


# ---------------------------------------------------------------- gradient check

def grad_check(model: Classifier, inputs, labels, eps: float = 1e-5,
               per_layer: int = 200, seed: int = 0, floor: float = 1e-4) -> float:
    """Max relative error between backprop and central differences.

    Runs on a float64 copy.  Up to ``per_layer`` entries of every parameter
    tensor are sampled; the error for one entry is
    ``|a - n| / max(|a|, |n|, floor)``, the floor absorbing round-off on
    near-zero gradients.

    ReLU masks and max-pool winners are frozen at the unperturbed point
    while differencing.  The frozen network equals the real one on the
    current linear region and is smooth across it, so its central
    difference converges to the true gradient even when a step of ``eps``
    would cross an activation kink.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    m = copy.deepcopy(model).astype(np.float64)
    x = {k: np.asarray(v, dtype=np.float64) for k, v in inputs.items()}
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    y = one_hot(labels, m.cfg.n_classes)
    m.loss_and_grad(x, labels)
    analytic = {name: layer.grads[key].copy() for name, layer, key in m.named_params()}
    for enc in m.encoders.values():
        enc.freeze_gates()
    rng = np.random.default_rng(seed)

    def loss():
        return softmax_xent(m.forward(x), y)[1]

    worst = 0.0
    for name, layer, key in m.named_params():
        p = layer.params[key]
        flat = p.reshape(-1)
        picks = rng.choice(flat.size, size=min(per_layer, flat.size), replace=False)
        for j in picks:
            old = flat[j]
            flat[j] = old + eps
            lp = loss()
            flat[j] = old - eps
            lm = loss()
            flat[j] = old
            num = (lp - lm) / (2 * eps)
            a = analytic[name].reshape(-1)[j]
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), floor))
    return worst


# ---------------------------------------------------------------- checkpoints

def save_model(path, model: Classifier, extra: dict | None = None) -> Path:
    path = Path(path)
    meta = {"format": CHECKPOINT_FORMAT, "config": model.cfg.to_dict(),
            "dtype": np.dtype(model.dtype).name, "extra": extra or {}}
    arrays = {name: layer.params[key] for name, layer, key in model.named_params()}
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_model(path) -> tuple[Classifier, dict]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
        model = Classifier(ModelConfig.from_dict(meta["config"]), dtype=np.dtype(meta["dtype"]))
        _load_state(model, {k: z[k] for k in z.files if k != "__meta__"})
    return model, meta.get("extra", {})
