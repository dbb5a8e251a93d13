"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array and, while gradients are enabled, records the
operations that produced it. ``backward`` on a scalar loss walks the recorded
graph in exact reverse topological order and accumulates (+=) into ``grad``
buffers of every tensor with ``requires_grad``. The op set is deliberately
small: exactly what the models in this package need.

Forward results are deterministic: every reduction is a plain numpy
reduction or a GEMM over identically-shaped operands, so repeated runs on
identical inputs are bit-identical.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError

_DEFAULT_DTYPE = np.float64


def set_default_dtype(dtype) -> None:
    """Switch the element type for newly created tensors (float64 or float32)."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ContractError(f"unsupported default dtype {dt}")
    _DEFAULT_DTYPE = dt.type


def default_dtype():
    return _DEFAULT_DTYPE


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A dense n-dimensional array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph plumbing --------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- operators ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return pow_const(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- shape ops --------------------------------------------------------

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, rng: np.random.Generator | None = None, scale: float | None = None,
              shape: tuple[int, ...] | None = None) -> Tensor:
    """Create a trainable tensor; with ``rng`` draws normal(0, scale) of ``shape``."""
    if rng is not None:
        assert shape is not None and scale is not None
        data = rng.standard_normal(shape) * scale
    return Tensor(np.asarray(data, dtype=_DEFAULT_DTYPE), requires_grad=True)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    tracked = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = tracked
    if tracked:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise arithmetic --------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(data, (a, b), backward)


def pow_const(a, exponent: float) -> Tensor:
    a = _as_tensor(a)
    e = float(exponent)
    data = a.data ** e

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * e * a.data ** (e - 1.0))

    return _make(data, (a,), backward)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * data)

    return _make(data, (a,), backward)


def log(a) -> Tensor:
    a = _as_tensor(a)
    data = np.log(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _make(data, (a,), backward)


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    data = np.sqrt(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * 0.5 / data)

    return _make(data, (a,), backward)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    data = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - data * data))

    return _make(data, (a,), backward)


def _sigmoid_raw(x: np.ndarray) -> np.ndarray:
    t = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + t), t / (1.0 + t))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    data = _sigmoid_raw(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * data * (1.0 - data))

    return _make(data, (a,), backward)


def softplus(a) -> Tensor:
    """log(1 + e^x), computed without overflow for large |x|."""
    a = _as_tensor(a)
    x = a.data
    data = np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * _sigmoid_raw(x))

    return _make(data, (a,), backward)


def absolute(a) -> Tensor:
    a = _as_tensor(a)
    data = np.abs(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * np.sign(a.data))

    return _make(data, (a,), backward)


def silu(a) -> Tensor:
    """x * sigmoid(x) — the smooth pointwise nonlinearity used by the nets."""
    a = _as_tensor(a)
    s = _sigmoid_raw(a.data)
    data = a.data * s

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (s + a.data * s * (1.0 - s)))

    return _make(data, (a,), backward)


def normalize(a, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """(x - mean) / sqrt(var + eps) along one axis, with a fused backward."""
    a = _as_tensor(a)
    x = a.data
    mu = x.mean(axis=axis, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        if a.requires_grad:
            gm = g.mean(axis=axis, keepdims=True)
            gx = (g * xhat).mean(axis=axis, keepdims=True)
            a._accumulate((g - gm - xhat * gx) * inv)

    return _make(xhat, (a,), backward)


# -- shape manipulation -------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    return _make(data, (a,), backward)


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    data = np.transpose(a.data, axes)
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.transpose(g, inv))

    return _make(data, (a,), backward)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if a.requires_grad:
            gg = g
            if not keepdims and axis is not None:
                gg = np.expand_dims(gg, axis)
            a._accumulate(np.broadcast_to(gg, a.shape))

    return _make(np.asarray(data), (a,), backward)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    n = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


# -- linear algebra -----------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product; 2-D or batched with identical leading dimensions."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    if a.ndim != b.ndim and not (a.ndim == 2 or b.ndim == 2):
        raise ShapeError(f"matmul batch ranks disagree: {a.shape} vs {b.shape}")
    if a.ndim == b.ndim and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dimensions disagree: {a.shape} vs {b.shape}")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.shape))

    return _make(data, (a, b), backward)


# -- softmax family -----------------------------------------------------------


def _check_softmax_input(x: np.ndarray, axis: int) -> None:
    if axis >= x.ndim or axis < -x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    if np.isneginf(x).all(axis=axis).any():
        raise NumericError("softmax over an all -inf slice is undefined")
    finite_or_neginf = np.isfinite(x) | np.isneginf(x)
    if not finite_or_neginf.all():
        raise NumericError("softmax input must be finite (or -inf mask sentinel)")


def softmax(a, axis: int = -1) -> Tensor:
    """Stable softmax; -inf entries (mask sentinel) map to exactly 0."""
    a = _as_tensor(a)
    x = a.data
    _check_softmax_input(x, axis)
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            dot = (g * s).sum(axis=axis, keepdims=True)
            a._accumulate(s * (g - dot))

    return _make(s, (a,), backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    _check_softmax_input(x, axis)
    m = np.max(x, axis=axis, keepdims=True)
    shifted = x - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse
    soft = np.exp(data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g - soft * g.sum(axis=axis, keepdims=True))

    return _make(data, (a,), backward)


# -- gather / scatter ---------------------------------------------------------


def gather_rows(table, idx) -> Tensor:
    """Embedding lookup: rows of ``table`` (V, D) selected by integer ``idx``."""
    table = _as_tensor(table)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ContractError(
            f"gather index out of range [0, {table.shape[0]}): min={idx.min()}, max={idx.max()}")
    data = table.data[idx]

    def backward(g):
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, idx.ravel(), g.reshape(-1, table.shape[-1]))
            table._accumulate(gt)

    return _make(data, (table,), backward)


def take_along_last(a, idx) -> Tensor:
    """Pick one entry per leading position along the last axis."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape != a.shape[:-1]:
        raise ShapeError(f"index shape {idx.shape} must match leading dims of {a.shape}")
    expanded = idx[..., None]
    data = np.take_along_axis(a.data, expanded, axis=-1)[..., 0]

    def backward(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            np.put_along_axis(ga, expanded, g[..., None], axis=-1)
            a._accumulate(ga)

    return _make(data, (a,), backward)


# -- convolution / resampling -------------------------------------------------


def conv2d(x, kernel, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of (B, C, H, W) input with (O, C, k, k) kernel."""
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape}, {kernel.shape}")
    B, C, H, W = x.shape
    O, Ck, kh, kw = kernel.shape
    if Ck != C:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    if stride < 1:
        raise ContractError(f"conv2d stride must be >= 1, got {stride}")
    Hp, Wp = H + 2 * pad, W + 2 * pad
    if kh > Hp or kw > Wp:
        raise ShapeError(
            f"conv2d kernel {kernel.shape} larger than padded input {(B, C, Hp, Wp)}")
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (B, C, Ho, Wo, kh, kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    wmat = kernel.data.reshape(O, C * kh * kw)
    out = (cols @ wmat.T).reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)

    def backward(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
        if kernel.requires_grad:
            gw = (gmat.T @ cols).reshape(O, C, kh, kw)
            kernel._accumulate(gw)
        if x.requires_grad:
            # one GEMM back to column space, then fold offsets channel-last
            dcols = (gmat @ kernel.data.reshape(O, C * kh * kw)).reshape(
                B, Ho, Wo, C, kh, kw)
            gx_pad = np.zeros((B, Hp, Wp, C), dtype=x.data.dtype)
            for i in range(kh):
                for j in range(kw):
                    gx_pad[:, i:i + stride * Ho:stride,
                           j:j + stride * Wo:stride, :] += dcols[:, :, :, :, i, j]
            gx = gx_pad[:, pad:pad + H, pad:pad + W, :] if pad else gx_pad
            x._accumulate(gx.transpose(0, 3, 1, 2))

    return _make(np.ascontiguousarray(out), (x, kernel), backward)


def upsample_nearest2x(x) -> Tensor:
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"upsample expects 4-D input, got {x.shape}")
    data = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(g):
        if x.requires_grad:
            B, C, H2, W2 = g.shape
            x._accumulate(g.reshape(B, C, H2 // 2, 2, W2 // 2, 2).sum(axis=(3, 5)))

    return _make(data, (x,), backward)


# -- straight-through ---------------------------------------------------------


def straight_through(z_hat, z_q) -> Tensor:
    """Forward value of ``z_q``; gradient passes unchanged to ``z_hat``."""
    z_hat, z_q = _as_tensor(z_hat), _as_tensor(z_q)
    if z_hat.shape != z_q.shape:
        raise ContractError(
            f"straight_through shape mismatch: {z_hat.shape} vs {z_q.shape}")
    data = z_q.data.copy()

    def backward(g):
        if z_hat.requires_grad:
            z_hat._accumulate(g)

    return _make(data, (z_hat,), backward)


def dropout(a, rate: float, rng: np.random.Generator) -> Tensor:
    if rate <= 0.0:
        return a
    a = _as_tensor(a)
    keep = (rng.random(a.shape) >= rate).astype(a.data.dtype) / (1.0 - rate)
    data = a.data * keep

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * keep)

    return _make(data, (a,), backward)


# -- backward pass ------------------------------------------------------------


def backward(loss: Tensor, retain_graph: bool = False) -> None:
    """Populate grads of everything ``loss`` depends on; clears the tape after.

    Gradients accumulate (+=): repeating forward+backward without zeroing
    doubles them. With ``retain_graph`` the recorded graph survives for a
    second pass.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward requires a Tensor loss")
    if loss.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not connected to any tracked tensor")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    # intermediate grads are scratch space; only leaves keep theirs
    for node in topo:
        if node._backward is not None:
            node.grad = None
            if not retain_graph:
                node._backward = None
                node._parents = ()


def zero_grads(params) -> None:
    for p in params:
        p.zero_grad()


def grad_wrt(loss: Tensor, wrt: Tensor) -> np.ndarray:
    """Gradient of ``loss`` w.r.t. one tensor, touching only the connecting path.

    Runs backward closures solely on nodes between ``loss`` and ``wrt``; the
    graph is retained. All scratch gradients written along the way are
    cleared, except parameter gradients, which the caller is expected to zero
    before its real backward pass.
    """
    if loss.size != 1:
        raise ContractError(f"grad_wrt requires a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    # parents appear before consumers in topo, so one forward scan marks
    # every node lying on a loss -> wrt path
    marked = {id(wrt)}
    for node in topo:
        if any(id(p) in marked for p in node._parents):
            marked.add(id(node))
    if id(loss) not in marked:
        return np.zeros_like(wrt.data)

    saved_wrt = wrt.grad
    wrt.grad = None
    loss._accumulate(np.ones_like(loss.data))
    touched: list[Tensor] = [loss]
    for node in reversed(topo):
        if id(node) in marked and node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            touched.extend(node._parents)
    out = wrt.grad.copy() if wrt.grad is not None else np.zeros_like(wrt.data)
    wrt.grad = saved_wrt
    for node in touched:
        if node is not wrt and node._backward is not None:
            node.grad = None
    return out


# -- gradient checking --------------------------------------------------------


def grad_check(f, x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a deterministic scalar function of ``x``. Relative error is
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8) per coordinate.
    """
    x.zero_grad()
    loss = f(x)
    backward(loss)
    analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)
    x.zero_grad()

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(x).data)
            flat[i] = orig - h
            fm = float(f(x).data)
            flat[i] = orig
            nflat[i] = (fp - fm) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


# -- serialization ------------------------------------------------------------

_TENSOR_MAGIC = b"TNSR"
_TENSOR_VERSION = 1
_DTYPE_TAGS = {np.dtype(np.float64): 0, np.dtype(np.float32): 1, np.dtype(np.int64): 2}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


def write_array(f, arr: np.ndarray) -> None:
    """Write one array in the binary tensor format (little-endian)."""
    arr = np.asarray(arr)
    if not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    if arr.dtype not in _DTYPE_TAGS:
        raise ContractError(f"unsupported tensor dtype {arr.dtype}")
    f.write(_TENSOR_MAGIC)
    f.write(struct.pack("<I", _TENSOR_VERSION))
    f.write(struct.pack("<I", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    f.write(struct.pack("<B", _DTYPE_TAGS[arr.dtype]))
    f.write(arr.astype(arr.dtype.newbyteorder("<")).tobytes())


def read_array(f) -> np.ndarray:
    magic = f.read(4)
    if magic != _TENSOR_MAGIC:
        raise ContractError(f"bad tensor magic {magic!r}")
    (version,) = struct.unpack("<I", f.read(4))
    if version != _TENSOR_VERSION:
        raise ContractError(f"unsupported tensor format version {version}")
    (rank,) = struct.unpack("<I", f.read(4))
    shape = struct.unpack(f"<{rank}Q", f.read(8 * rank)) if rank else ()
    (tag,) = struct.unpack("<B", f.read(1))
    dtype = _TAG_DTYPES.get(tag)
    if dtype is None:
        raise ContractError(f"unknown tensor dtype tag {tag}")
    n = int(np.prod(shape)) if shape else 1
    buf = f.read(n * dtype.itemsize)
    arr = np.frombuffer(buf, dtype=dtype.newbyteorder("<")).astype(dtype)
    return arr.reshape(shape)
