"""Autoregressive decoding: temperature/top-k next-token sampling, full-grid
generation, and the sliding-window procedure that grows latent grids past the
transformer's context length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .quantizer import IndexGrid
from .scan_orders import ScanOrder, build, flatten, unflatten
from .transformer import COORD_BUCKETS, CachedDecoder, LatentTransformer

WINDOW = (16, 16)


@dataclass
class SamplingParams:
    temperature: float = 1.0
    top_k: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")


def sample_next(logits: np.ndarray, params: SamplingParams,
                rng: np.random.Generator) -> int:
    """Temperature-scale, keep the top_k largest (ties by lower index),
    renormalize, draw one index."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise ContractError(f"sample_next expects a logit vector, got shape {logits.shape}")
    if not np.isfinite(logits).all():
        raise ContractError("sample_next requires finite logits")
    k = min(params.top_k, logits.size)
    scaled = logits / params.temperature
    order = np.argsort(-scaled, kind="stable")[:k]
    kept = scaled[order]
    kept -= kept.max()
    probs = np.exp(kept)
    probs /= probs.sum()
    cdf = np.cumsum(probs)
    pick = int(np.searchsorted(cdf, rng.random(), side="right"))
    return int(order[min(pick, k - 1)])


def _condition_prefix(cond, model: LatentTransformer, order_kind: str) -> list[int]:
    cfg = model.config
    if cond is None:
        return [cfg.bos_token]
    if isinstance(cond, (int, np.integer)):
        return [cfg.class_token(int(cond))]
    if isinstance(cond, IndexGrid):
        if cond.K > cfg.K_cond:
            raise ConfigError(
                f"condition vocabulary {cond.K} exceeds configured K_cond={cfg.K_cond}")
        cond_order = build(order_kind, cond.h, cond.w)
        return list(flatten(cond, cond_order) + cfg.K)
    raise ContractError(f"condition must be None, an int label or IndexGrid, got {type(cond)}")


def _decode_tokens(model: LatentTransformer, prefix: list[int], n: int,
                   params: SamplingParams, rng: np.random.Generator,
                   use_cache: bool = True) -> np.ndarray:
    """Sample ``n`` data tokens (< K) continuing the given prefix."""
    K = model.config.K
    out: list[int] = []
    if use_cache:
        dec = CachedDecoder(model)
        logits = dec.prefill(prefix)
        for t in range(n):
            tok = sample_next(logits[:K], params, rng)
            out.append(tok)
            if t < n - 1:
                logits = dec.append(tok)
    else:
        toks = list(prefix)
        for _ in range(n):
            with T.no_grad():
                logits = model.forward(np.array(toks, dtype=np.int64)).data[0, -1]
            tok = sample_next(logits[:K], params, rng)
            out.append(tok)
            toks.append(tok)
    return np.array(out, dtype=np.int64)


def sample_grid(model: LatentTransformer, shape: tuple[int, int], order: ScanOrder,
                params: SamplingParams, cond=None, use_cache: bool = True) -> IndexGrid:
    """Draw a full h x w grid token by token in the given scan order."""
    h, w = shape
    if (order.h, order.w) != (h, w):
        raise ContractError(f"scan order built for {order.h}x{order.w}, not {h}x{w}")
    prefix = _condition_prefix(cond, model, order.kind)
    if len(prefix) + h * w > model.config.seq_len:
        raise ContractError(
            f"{len(prefix)} prefix + {h * w} grid tokens exceed seq_len "
            f"{model.config.seq_len}; use sliding_window_sample for larger grids")
    rng = np.random.default_rng(params.seed)
    seq = _decode_tokens(model, prefix, h * w, params, rng, use_cache=use_cache)
    return unflatten(seq, order, model.config.K)


@dataclass
class WindowPlan:
    """Window placement for every cell of a grid larger than the context."""

    full: tuple[int, int]
    window: tuple[int, int]
    # (n_cells, 3): window top-left (r0, c0) and the target's local index,
    # listed in global row-major generation order
    entries: np.ndarray

    def entry(self, i: int, j: int) -> tuple[int, int, int]:
        r0, c0, local = self.entries[i * self.full[1] + j]
        return int(r0), int(c0), int(local)


def plan_windows(full: tuple[int, int], window: tuple[int, int] = WINDOW) -> WindowPlan:
    """Center each target inside its window, clamped at the borders.

    Generation is global row-major; the plan guarantees every in-window cell
    preceding the target locally has already been generated globally.
    """
    hf, wf = full
    wh, ww = window
    if hf < wh or wf < ww:
        raise ContractError(
            f"grid {hf}x{wf} smaller than window {wh}x{ww}: fall back to sample_grid")
    entries = np.empty((hf * wf, 3), dtype=np.int64)
    for i in range(hf):
        r0 = min(max(i - (wh // 2 - 1), 0), hf - wh)
        for j in range(wf):
            c0 = min(max(j - (ww // 2 - 1), 0), wf - ww)
            local = (i - r0) * ww + (j - c0)
            entries[i * wf + j] = (r0, c0, local)
    return WindowPlan(full=full, window=window, entries=entries)


def _coord_prefix(model: LatentTransformer, r0: int, c0: int,
                  full: tuple[int, int], window: tuple[int, int]) -> list[int]:
    hf, wf = full
    wh, ww = window
    rb = 0 if hf == wh else min(COORD_BUCKETS - 1, (r0 * COORD_BUCKETS) // (hf - wh + 1))
    cb = 0 if wf == ww else min(COORD_BUCKETS - 1, (c0 * COORD_BUCKETS) // (wf - ww + 1))
    return list(model.config.coord_tokens(rb, cb))


def sliding_window_sample(model: LatentTransformer, full: tuple[int, int],
                          order: ScanOrder, params: SamplingParams,
                          cond: IndexGrid | None = None, coords: bool = False,
                          window: tuple[int, int] = WINDOW) -> IndexGrid:
    """Generate a grid of any size by re-cropping a context window per cell.

    Each target cell (global row-major order) sees the already-generated
    cells of its window as local prefix; with a spatial condition the
    matching condition crop is prepended, and ``coords`` adds two tokens
    encoding the window origin.
    """
    if order.kind != "row_major":
        raise ContractError(
            f"sliding-window sampling depends on row_major order, got {order.kind}")
    hf, wf = full
    if (order.h, order.w) != (hf, wf):
        raise ContractError(f"scan order built for {order.h}x{order.w}, not {hf}x{wf}")
    if cond is not None and (cond.h, cond.w) != (hf, wf):
        raise ShapeError(
            f"condition grid {cond.h}x{cond.w} must align 1:1 with the {hf}x{wf} grid")

    wh, ww = window
    if hf <= wh and wf <= ww and not coords:
        # degenerate window (or smaller): full-grid sampling
        return sample_grid(model, full, order, params, cond=cond)

    plan = plan_windows(full, window)
    rng = np.random.default_rng(params.seed)
    grid = np.zeros((hf, wf), dtype=np.int64)
    K = model.config.K
    for i in range(hf):
        for j in range(wf):
            r0, c0, local = plan.entry(i, j)
            local_cells = grid[r0:r0 + wh, c0:c0 + ww].reshape(-1)[:local]
            prefix: list[int] = []
            if coords:
                prefix += _coord_prefix(model, r0, c0, full, window)
            if cond is not None:
                cwin = IndexGrid(cond.values[r0:r0 + wh, c0:c0 + ww], cond.K)
                prefix += list(flatten(cwin, build("row_major", wh, ww)) + K)
            if not prefix:
                prefix = [model.config.bos_token]
            tokens = np.array(prefix + list(local_cells), dtype=np.int64)
            with T.no_grad():
                logits = model.forward(tokens).data[0, -1]
            grid[i, j] = sample_next(logits[:K], params, rng)
    return IndexGrid(grid, K)
