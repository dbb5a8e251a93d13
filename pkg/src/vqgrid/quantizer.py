"""Discrete bottleneck: codebook storage, nearest-neighbor quantization,
index mapping and the quantization training losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, NumericError
from .tensor import Tensor


@dataclass
class IndexGrid:
    """h x w grid of codebook indices, each in [0, K)."""

    values: np.ndarray
    K: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int64)
        if self.values.ndim != 2:
            raise ContractError(f"index grid must be 2-D, got shape {self.values.shape}")
        if self.values.size and (self.values.min() < 0 or self.values.max() >= self.K):
            raise ContractError(
                f"index grid values must lie in [0, {self.K}); "
                f"got range [{self.values.min()}, {self.values.max()}]")

    @property
    def h(self) -> int:
        return self.values.shape[0]

    @property
    def w(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        return (isinstance(other, IndexGrid) and self.K == other.K
                and np.array_equal(self.values, other.values))


def save_index_grid(path, grid: IndexGrid) -> None:
    """Text export: header line "h w K", then one space-separated row per line."""
    with open(path, "w") as f:
        f.write(f"{grid.h} {grid.w} {grid.K}\n")
        for row in grid.values:
            f.write(" ".join(str(int(v)) for v in row) + "\n")


def load_index_grid(path) -> IndexGrid:
    with open(path) as f:
        h, w, K = (int(v) for v in f.readline().split())
        values = np.array([[int(v) for v in f.readline().split()] for _ in range(h)])
    if values.shape != (h, w):
        raise ContractError(f"index grid file body {values.shape} disagrees with header ({h}, {w})")
    return IndexGrid(values, K)


class Codebook:
    """Ordered set of K learnable code vectors of dimension n_z."""

    def __init__(self, K: int, n_z: int, rng: np.random.Generator | None = None,
                 entries: np.ndarray | None = None):
        if K < 1 or n_z < 1:
            raise ConfigError(f"codebook needs K >= 1 and n_z >= 1, got K={K}, n_z={n_z}")
        if entries is None:
            rng = rng or np.random.default_rng(0)
            entries = rng.uniform(-1.0 / K, 1.0 / K, size=(K, n_z))
        entries = np.asarray(entries, dtype=T.default_dtype())
        if entries.shape != (K, n_z):
            raise ConfigError(f"entries shape {entries.shape} != ({K}, {n_z})")
        if not np.isfinite(entries).all():
            raise NumericError("codebook entries must be finite")
        self.entries = Tensor(entries, requires_grad=True)
        self.K = K
        self.n_z = n_z

    def named_params(self):
        return {"entries": self.entries}

    def params(self):
        return [self.entries]


@dataclass
class QuantizationResult:
    z_q: Tensor                 # same shape as the input, values from the codebook
    indices: np.ndarray         # input shape minus the code dimension
    codebook_loss: Tensor       # mean ||sg[z_hat] - z_q||^2
    commitment_loss: Tensor     # mean ||sg[z_q] - z_hat||^2

    @property
    def grid(self) -> IndexGrid:
        if self.indices.ndim != 2:
            raise ContractError(f"result holds a batch of shape {self.indices.shape}, not one grid")
        return IndexGrid(self.indices, self._K)

    _K: int = 0


def nearest_indices(z: np.ndarray, entries: np.ndarray) -> np.ndarray:
    """Index of the closest entry per row, ties broken by lowest index."""
    # ||z - e||^2 = ||z||^2 - 2 z.e + ||e||^2; the z term is constant per row
    cross = z @ entries.T
    d = (entries * entries).sum(axis=1)[None, :] - 2.0 * cross
    return np.argmin(d, axis=1)


def quantize(z_hat: Tensor, cb: Codebook) -> QuantizationResult:
    """Map every spatial code vector onto its nearest codebook entry.

    Accepts (h, w, n_z) or any leading shape ending in n_z. The returned
    ``z_q`` is a gather from the codebook (differentiable w.r.t. entries);
    the two loss terms carry the stop-gradient placement of the training
    objective.
    """
    if not isinstance(z_hat, Tensor):
        z_hat = Tensor(z_hat)
    if z_hat.shape[-1] != cb.n_z:
        raise ContractError(
            f"code dimension mismatch: input has {z_hat.shape[-1]}, codebook has {cb.n_z}")
    if not np.isfinite(z_hat.data).all():
        raise NumericError("quantize input contains non-finite values")

    lead = z_hat.shape[:-1]
    flat = z_hat.data.reshape(-1, cb.n_z)
    idx = nearest_indices(flat, cb.entries.data).reshape(lead)

    z_q = T.reshape(T.gather_rows(cb.entries, idx.reshape(-1)), lead + (cb.n_z,))
    diff_cb = z_hat.detach() - z_q          # gradient flows to entries only
    diff_commit = z_q.detach() - z_hat      # gradient flows to the encoder only
    codebook_loss = (diff_cb * diff_cb).mean()
    commitment_loss = (diff_commit * diff_commit).mean()
    return QuantizationResult(z_q=z_q, indices=idx, codebook_loss=codebook_loss,
                              commitment_loss=commitment_loss, _K=cb.K)


def indices_of(q: QuantizationResult) -> IndexGrid:
    """The index grid chosen by quantize (pure accessor)."""
    return q.grid


def lookup(s, cb: Codebook) -> Tensor:
    """Map indices back to codebook entries: (z_q)_ij = entries[s_ij]."""
    values = s.values if isinstance(s, IndexGrid) else np.asarray(s, dtype=np.int64)
    if values.size and (values.min() < 0 or values.max() >= cb.K):
        raise ContractError(
            f"lookup index out of range [0, {cb.K}): max={values.max()}, min={values.min()}")
    return T.reshape(T.gather_rows(cb.entries, values.reshape(-1)),
                     values.shape + (cb.n_z,))


def straight_through(z_hat: Tensor, z_q: Tensor) -> Tensor:
    """Quantized values forward, encoder gradients backward."""
    return T.straight_through(z_hat, z_q)


def vq_loss(x: Tensor, x_hat: Tensor, q: QuantizationResult, beta: float,
            rec_loss) -> Tensor:
    """rec_loss(x, x_hat) + codebook term + beta * commitment term."""
    if beta < 0:
        raise ConfigError(f"commitment weight beta must be >= 0, got {beta}")
    return rec_loss(x, x_hat) + q.codebook_loss + beta * q.commitment_loss


def reseed_dead_codes(cb: Codebook, z_samples: np.ndarray, used: np.ndarray,
                      rng: np.random.Generator) -> int:
    """Replace unused entries with random encoder outputs; returns count replaced.

    Off by default in training; an aid for small-data experiments.
    """
    dead = np.flatnonzero(~used)
    if dead.size == 0:
        return 0
    flat = z_samples.reshape(-1, cb.n_z)
    picks = rng.integers(0, flat.shape[0], size=dead.size)
    cb.entries.data[dead] = flat[picks]
    return int(dead.size)
