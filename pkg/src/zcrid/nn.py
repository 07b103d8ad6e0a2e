"""Minimal numpy layers with explicit backward passes.

Batches are leading-axis arrays: images ``(B, C, H, W)``, sequences
``(B, C, W)``, vectors ``(B, D)``.  Every layer caches what its backward
pass needs during ``forward`` and accumulates nothing between calls.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def astype(self, dtype):
        for k in self.params:
            self.params[k] = self.params[k].astype(dtype)
        return self


def _uniform(rng, shape, fan_in, dtype):
    # He-style uniform, scaled by fan-in
    lim = np.sqrt(6.0 / fan_in)
    return rng.uniform(-lim, lim, size=shape).astype(dtype)


class Dense(Layer):
    def __init__(self, n_in, n_out, rng, dtype=np.float32):
        super().__init__()
        self.params["W"] = _uniform(rng, (n_in, n_out), n_in, dtype)
        self.params["b"] = np.zeros(n_out, dtype=dtype)

    def forward(self, x):
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        self.grads["W"] = self._x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["W"].T


class ReLU(Layer):
    # when frozen, forward reuses the last mask (used by gradient checks)
    frozen = False

    def forward(self, x):
        if not self.frozen:
            self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask


class Identity(Layer):
    def forward(self, x):
        return x

    def backward(self, dout):
        return dout


def activation(name: str) -> Layer:
    if name == "relu":
        return ReLU()
    if name == "linear":
        return Identity()
    raise ValueError(f"unknown activation {name!r}")


class Flatten(Layer):
    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Conv2D(Layer):
    """Stride-1 convolution with symmetric zero padding."""

    def __init__(self, c_in, c_out, k, rng, pad=None, dtype=np.float32):
        super().__init__()
        self.k = k
        self.pad = k // 2 if pad is None else pad
        fan_in = c_in * k * k
        self.params["W"] = _uniform(rng, (c_out, c_in, k, k), fan_in, dtype)
        self.params["b"] = np.zeros(c_out, dtype=dtype)

    def forward(self, x):
        b, c, h, w = x.shape
        p, k = self.pad, self.k
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        ho, wo = h + 2 * p - k + 1, w + 2 * p - k + 1
        cols = sliding_window_view(xp, (k, k), axis=(2, 3))  # (b, c, ho, wo, k, k)
        cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * k * k)
        self._cache = (x.shape, cols, ho, wo)
        wmat = self.params["W"].reshape(self.params["W"].shape[0], -1)
        out = cols @ wmat.T + self.params["b"]
        return out.reshape(b, ho, wo, -1).transpose(0, 3, 1, 2)

    def backward(self, dout):
        (b, c, h, w), cols, ho, wo = self._cache
        p, k = self.pad, self.k
        c_out = dout.shape[1]
        d = dout.transpose(0, 2, 3, 1).reshape(-1, c_out)
        wmat = self.params["W"].reshape(c_out, -1)
        self.grads["W"] = (d.T @ cols).reshape(self.params["W"].shape)
        self.grads["b"] = d.sum(axis=0)
        dcols = (d @ wmat).reshape(b, ho, wo, c, k, k)
        dxp = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i: i + ho, j: j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, p: p + h, p: p + w]


class Conv1D(Layer):
    """Stride-1 1-D convolution over the last axis, symmetric zero padding."""

    def __init__(self, c_in, c_out, k, rng, pad=None, dtype=np.float32):
        super().__init__()
        self.k = k
        self.pad = k // 2 if pad is None else pad
        self.params["W"] = _uniform(rng, (c_out, c_in, k), c_in * k, dtype)
        self.params["b"] = np.zeros(c_out, dtype=dtype)

    def forward(self, x):
        b, c, w = x.shape
        p, k = self.pad, self.k
        xp = np.pad(x, ((0, 0), (0, 0), (p, p)))
        wo = w + 2 * p - k + 1
        cols = sliding_window_view(xp, k, axis=2)  # (b, c, wo, k)
        cols = cols.transpose(0, 2, 1, 3).reshape(b * wo, c * k)
        self._cache = (x.shape, cols, wo)
        wmat = self.params["W"].reshape(self.params["W"].shape[0], -1)
        out = cols @ wmat.T + self.params["b"]
        return out.reshape(b, wo, -1).transpose(0, 2, 1)

    def backward(self, dout):
        (b, c, w), cols, wo = self._cache
        p, k = self.pad, self.k
        c_out = dout.shape[1]
        d = dout.transpose(0, 2, 1).reshape(-1, c_out)
        self.grads["W"] = (d.T @ cols).reshape(self.params["W"].shape)
        self.grads["b"] = d.sum(axis=0)
        dcols = (d @ self.params["W"].reshape(c_out, -1)).reshape(b, wo, c, k)
        dxp = np.zeros((b, c, w + 2 * p), dtype=dout.dtype)
        for i in range(k):
            dxp[:, :, i: i + wo] += dcols[:, :, :, i].transpose(0, 2, 1)
        return dxp[:, :, p: p + w]


class AvgPool2D(Layer):
    def __init__(self, s):
        super().__init__()
        self.s = s

    def forward(self, x):
        b, c, h, w = x.shape
        s = self.s
        self._shape = x.shape
        return x[:, :, : h // s * s, : w // s * s].reshape(b, c, h // s, s, w // s, s).mean(axis=(3, 5))

    def backward(self, dout):
        s = self.s
        dx = np.zeros(self._shape, dtype=dout.dtype)
        g = np.repeat(np.repeat(dout, s, axis=2), s, axis=3) / (s * s)
        dx[:, :, : g.shape[2], : g.shape[3]] = g
        return dx


class MaxPool1D(Layer):
    """Non-overlapping max pooling; a trailing remainder is dropped."""

    frozen = False

    def __init__(self, s):
        super().__init__()
        self.s = s

    def forward(self, x):
        b, c, w = x.shape
        s = self.s
        n = w // s
        blocks = x[:, :, : n * s].reshape(b, c, n, s)
        if not self.frozen:
            self._arg = blocks.argmax(axis=3)
        self._shape = x.shape
        return np.take_along_axis(blocks, self._arg[..., None], axis=3)[..., 0]

    def backward(self, dout):
        b, c, w = self._shape
        s = self.s
        n = w // s
        g = np.zeros((b, c, n, s), dtype=dout.dtype)
        np.put_along_axis(g, self._arg[..., None], dout[..., None], axis=3)
        dx = np.zeros(self._shape, dtype=dout.dtype)
        dx[:, :, : n * s] = g.reshape(b, c, n * s)
        return dx


class Sequential(Layer):
    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def named_params(self, prefix: str = ""):
        """Yield (name, layer, key) for every parameter, in a fixed order."""
        for i, layer in enumerate(self.layers):
            for key in layer.params:
                yield f"{prefix}{i}.{key}", layer, key

    def astype(self, dtype):
        for layer in self.layers:
            layer.astype(dtype)
        return self

    def freeze_gates(self, frozen: bool = True) -> None:
        for layer in self.layers:
            if isinstance(layer, (ReLU, MaxPool1D)):
                layer.frozen = frozen


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
