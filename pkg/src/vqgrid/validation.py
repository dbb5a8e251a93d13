"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np

from .errors import ContractError, NumericError, ShapeError


class NotFittedError(ContractError):
    """Estimator used before ``fit``."""


def check_fitted(estimator, attr: str) -> None:
    if getattr(estimator, attr, None) is None:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted yet; call fit first")


def check_images(X, image_size: int | None = None) -> np.ndarray:
    """Coerce to a (N, 3, H, W) float64 batch in [-1, 1].

    Accepts channel-first or channel-last batches; single images get a batch
    axis. Values outside [-1, 1] (beyond rounding slack) are rejected rather
    than silently rescaled.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4:
        raise ShapeError(f"expected an image batch, got array of shape {X.shape}")
    if X.shape[1] != 3 and X.shape[-1] == 3:
        X = X.transpose(0, 3, 1, 2)
    if X.shape[1] != 3:
        raise ShapeError(f"expected 3 channels, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise NumericError("images contain non-finite values")
    if X.min() < -1.0001 or X.max() > 1.0001:
        raise NumericError(
            f"images must be normalized to [-1, 1]; got range "
            f"[{X.min():.3f}, {X.max():.3f}]")
    if image_size is not None and X.shape[2:] != (image_size, image_size):
        raise ShapeError(
            f"expected {image_size}x{image_size} images, got {X.shape[2]}x{X.shape[3]}")
    return np.clip(X, -1.0, 1.0)


def check_index_grids(S, K: int | None = None) -> np.ndarray:
    """Coerce to a (N, h, w) int64 batch of codebook indices."""
    S = np.asarray(S)
    if not np.issubdtype(S.dtype, np.integer):
        if np.issubdtype(S.dtype, np.floating) and np.all(S == np.round(S)):
            S = S.astype(np.int64)
        else:
            raise ContractError("index grids must hold integers")
    S = S.astype(np.int64)
    if S.ndim == 2:
        S = S[None]
    if S.ndim != 3:
        raise ShapeError(f"expected (N, h, w) index grids, got shape {S.shape}")
    if S.size and S.min() < 0:
        raise ContractError("index grids must be non-negative")
    if K is not None and S.size and S.max() >= K:
        raise ContractError(f"index {S.max()} out of range for codebook size {K}")
    return S
