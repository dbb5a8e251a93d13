"""Image file IO: 8-bit PNG / binary PPM in, normalized [-1, 1] arrays out."""

from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import ContractError


def load_image(path) -> np.ndarray:
    """Read a PNG/PPM file as a (3, H, W) float array in [-1, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr.transpose(2, 0, 1) / 127.5 - 1.0


def save_image(path, arr: np.ndarray) -> None:
    """Write a (3, H, W) array in [-1, 1] as PNG (or PPM by extension)."""
    arr = np.asarray(arr)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ContractError(f"expected (3, H, W) image, got {arr.shape}")
    u8 = np.clip((arr + 1.0) * 127.5, 0, 255).round().astype(np.uint8)
    Image.fromarray(u8.transpose(1, 2, 0)).save(path)


def center_crop_resize(arr: np.ndarray, size: int) -> np.ndarray:
    """Center-crop to square, then resize to size x size (bilinear)."""
    _, H, W = arr.shape
    side = min(H, W)
    top, left = (H - side) // 2, (W - side) // 2
    arr = arr[:, top:top + side, left:left + side]
    if side == size:
        return arr
    u8 = np.clip((arr + 1.0) * 127.5, 0, 255).round().astype(np.uint8)
    im = Image.fromarray(u8.transpose(1, 2, 0)).resize((size, size), Image.BILINEAR)
    return np.asarray(im, dtype=np.float64).transpose(2, 0, 1) / 127.5 - 1.0
