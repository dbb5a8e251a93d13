"""Small trainable building blocks shared by the encoder, decoder,
discriminator and transformer. Each layer exposes ``named_params`` so
checkpoints get stable tensor names.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Layer:
    def named_params(self) -> dict[str, Tensor]:
        raise NotImplementedError

    def params(self) -> list[Tensor]:
        return list(self.named_params().values())


def collect(children: dict[str, Layer]) -> dict[str, Tensor]:
    out: dict[str, Tensor] = {}
    for prefix, child in children.items():
        for name, p in child.named_params().items():
            out[f"{prefix}.{name}"] = p
    return out


def load_into(layer: Layer, blobs: dict[str, np.ndarray], prefix: str = "") -> None:
    """Copy checkpoint arrays into a layer's parameters by name."""
    for name, p in layer.named_params().items():
        key = f"{prefix}{name}"
        if key not in blobs:
            raise KeyError(f"checkpoint missing tensor {key!r}")
        arr = blobs[key]
        if arr.shape != p.shape:
            raise KeyError(f"checkpoint tensor {key!r} has shape {arr.shape}, expected {p.shape}")
        p.data = arr.astype(T.default_dtype())


class Linear(Layer):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 scale: float | None = None, zero_init: bool = False, bias: bool = True):
        if zero_init:
            w = np.zeros((d_in, d_out))
        else:
            s = scale if scale is not None else (1.0 / np.sqrt(d_in))
            w = rng.standard_normal((d_in, d_out)) * s
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        lead = x.shape[:-1]
        flat = T.reshape(x, (-1, x.shape[-1]))
        out = flat @ self.w
        if self.b is not None:
            out = out + self.b
        return T.reshape(out, lead + (self.w.shape[1],))

    def named_params(self):
        out = {"w": self.w}
        if self.b is not None:
            out["b"] = self.b
        return out


class Conv2d(Layer):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator,
                 stride: int = 1, pad: int = 0, zero_init: bool = False):
        fan_in = c_in * k * k
        if zero_init:
            w = np.zeros((c_out, c_in, k, k))
        else:
            w = rng.standard_normal((c_out, c_in, k, k)) * np.sqrt(2.0 / fan_in)
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(c_out), requires_grad=True)
        self.stride = stride
        self.pad = pad
        self.k = k

    def __call__(self, x: Tensor) -> Tensor:
        out = T.conv2d(x, self.w, stride=self.stride, pad=self.pad)
        return out + T.reshape(self.b, (1, -1, 1, 1))

    def named_params(self):
        return {"w": self.w, "b": self.b}


def _norm_groups(channels: int) -> int:
    # at least 4 channels per group so per-position statistics are non-degenerate
    for g in (8, 4, 2):
        if channels % g == 0 and channels // g >= 4:
            return g
    return 1


class GroupNorm(Layer):
    """Normalize each spatial position over its channel groups.

    Statistics are taken within a group of channels at one position only, so
    the layer never widens a receptive field.
    """

    def __init__(self, channels: int, eps: float = 1e-6):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.groups = _norm_groups(channels)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        B, C, H, W = x.shape
        g = self.groups
        xn = T.normalize(T.reshape(x, (B, g, C // g, H * W)), axis=2, eps=self.eps)
        xn = T.reshape(xn, (B, C, H, W))
        return xn * T.reshape(self.gamma, (1, C, 1, 1)) + T.reshape(self.beta, (1, C, 1, 1))

    def named_params(self):
        return {"gamma": self.gamma, "beta": self.beta}


class LayerNorm(Layer):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.normalize(x, axis=-1, eps=self.eps) * self.gamma + self.beta

    def named_params(self):
        return {"gamma": self.gamma, "beta": self.beta}


class Embedding(Layer):
    def __init__(self, vocab: int, dim: int, rng: np.random.Generator, scale: float = 0.02):
        self.table = Tensor(rng.standard_normal((vocab, dim)) * scale, requires_grad=True)

    def __call__(self, idx: np.ndarray) -> Tensor:
        return T.gather_rows(self.table, idx)

    def named_params(self):
        return {"table": self.table}
