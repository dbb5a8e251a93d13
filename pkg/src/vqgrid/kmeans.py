"""Lloyd's k-means over pixel RGB values and the degenerate f=1 codec built
from it: every pixel becomes the index of its nearest color centroid, so the
transformer stage can run directly on (quantized) pixels.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .quantizer import nearest_indices


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iters: int = 50,
           tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Cluster rows of ``points``; returns (centroids, assignments, objective curve).

    k-means++ seeding with a fixed generator; if fewer distinct rows than k
    exist, k is reduced with a warning. The recorded objective (mean squared
    distance) is non-increasing per Lloyd iteration.
    """
    points = np.asarray(points, dtype=np.float64)
    distinct = np.unique(points, axis=0)
    if k > len(distinct):
        warnings.warn(f"k={k} exceeds {len(distinct)} distinct points; reducing")
        k = len(distinct)
    if k < 1:
        raise ConfigError("k must be >= 1")

    rng = np.random.default_rng(seed)
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(len(points))]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[i:] = distinct[rng.choice(len(distinct), k - i, replace=False)]
            break
        probs = d2 / total
        centroids[i] = points[rng.choice(len(points), p=probs)]
        d2 = np.minimum(d2, ((points - centroids[i]) ** 2).sum(axis=1))

    history: list[float] = []
    assignments = nearest_indices(points, centroids)
    for _ in range(max_iters):
        for j in range(k):
            sel = assignments == j
            if sel.any():
                centroids[j] = points[sel].mean(axis=0)
        new_assign = nearest_indices(points, centroids)
        obj = float(((points - centroids[new_assign]) ** 2).sum(axis=1).mean())
        assignments = new_assign
        if history and history[-1] - obj < tol:
            history.append(obj)
            break
        history.append(obj)
    return centroids, assignments, history


@dataclass
class PixelCodec:
    """Frozen 512-color style dictionary acting as a downsampling-free codec."""

    centroids: np.ndarray  # (K, 3)

    @property
    def K(self) -> int:
        return len(self.centroids)

    @property
    def f(self) -> int:
        return 1

    def latent_shape(self, H: int, W: int) -> tuple[int, int]:
        return H, W

    def encode_indices(self, images: np.ndarray) -> np.ndarray:
        """(B, 3, H, W) images to (B, H, W) centroid-index grids."""
        images = np.asarray(images)
        B, C, H, W = images.shape
        flat = images.transpose(0, 2, 3, 1).reshape(-1, C)
        return nearest_indices(flat, self.centroids).reshape(B, H, W)

    def decode_indices(self, grids: np.ndarray) -> np.ndarray:
        grids = np.asarray(grids, dtype=np.int64)
        out = self.centroids[grids]  # (B, H, W, 3)
        return out.transpose(0, 3, 1, 2)


def fit_pixel_codec(images: np.ndarray, k: int = 512, seed: int = 0,
                    max_pixels: int = 200_000) -> PixelCodec:
    """k-means over the RGB values of a (N, 3, H, W) image stack."""
    images = np.asarray(images)
    pixels = images.transpose(0, 2, 3, 1).reshape(-1, 3)
    if len(pixels) > max_pixels:
        sel = np.random.default_rng(seed).choice(len(pixels), max_pixels, replace=False)
        pixels = pixels[sel]
    centroids, _, _ = kmeans(pixels, k, seed=seed)
    return PixelCodec(centroids=centroids)
