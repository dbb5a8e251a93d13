"""Dataset ingestion and the built-in synthetic dataset.

A dataset directory holds PNG/PPM images; an optional sibling directory of
condition maps pairs by filename, and ``labels.txt`` ("filename<TAB>int")
provides class labels. The synthetic generator draws colored shapes on
textured backgrounds with exact layout maps, so conditional experiments run
without downloads.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .images import center_crop_resize, load_image, save_image

IMAGE_SUFFIXES = (".png", ".ppm")


@dataclass
class DatasetHandle:
    images: np.ndarray                       # (N, 3, S, S) in [-1, 1]
    names: list[str]
    conditions: np.ndarray | None = None     # (N, 3, S, S) layout maps
    labels: np.ndarray | None = None         # (N,) ints
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.names)

    def batches(self, batch_size: int, seed: int, steps: int):
        """Yield index arrays forever, reshuffling each epoch under one seed."""
        rng = np.random.default_rng(seed)
        produced = 0
        while produced < steps:
            perm = rng.permutation(len(self.names))
            for start in range(0, len(perm), batch_size):
                if produced >= steps:
                    return
                idx = perm[start:start + batch_size]
                if len(idx) < batch_size and len(self.names) >= batch_size:
                    continue  # drop ragged tail for stable batch shapes
                yield idx
                produced += 1


def _list_images(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir()
                  if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())


def ingest_dataset(directory, size: int, condition_dir=None,
                   labels_file: str = "labels.txt") -> DatasetHandle:
    """Load a folder of images (plus optional conditions and labels).

    Unreadable files are skipped with a warning; images missing their
    condition map are excluded. Iteration order is by sorted filename.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"dataset directory {directory} does not exist")
    paths = _list_images(directory)
    cond_dir = Path(condition_dir) if condition_dir else None

    labels_map: dict[str, int] = {}
    labels_path = directory / labels_file
    if labels_path.exists():
        for line in labels_path.read_text().splitlines():
            if line.strip():
                name, lab = line.split("\t")
                labels_map[name] = int(lab)

    images, names, conds, labels = [], [], [], []
    skipped = 0
    for p in paths:
        try:
            img = center_crop_resize(load_image(p), size)
        except Exception as exc:  # unreadable file
            warnings.warn(f"skipping unreadable image {p.name}: {exc}")
            skipped += 1
            continue
        if cond_dir is not None:
            cp = cond_dir / p.name
            if not cp.exists():
                warnings.warn(f"no condition map for {p.name}; pair excluded")
                skipped += 1
                continue
            conds.append(center_crop_resize(load_image(cp), size))
        images.append(img)
        names.append(p.name)
        if labels_map:
            labels.append(labels_map.get(p.name, 0))
    if not images:
        raise ConfigError(f"no usable images in {directory}")
    return DatasetHandle(
        images=np.stack(images), names=names,
        conditions=np.stack(conds) if conds else None,
        labels=np.array(labels, dtype=np.int64) if labels else None,
        skipped=skipped)


# -- synthetic data -----------------------------------------------------------

_SHAPE_COLORS = np.array([
    [0.9, 0.2, 0.2], [0.2, 0.8, 0.3], [0.25, 0.35, 0.95], [0.95, 0.85, 0.2],
])


def _textured_background(rng, size):
    base = rng.uniform(-0.6, 0.2, size=3)
    x = np.linspace(0, np.pi * rng.uniform(1, 3), size)
    stripes = 0.15 * np.sin(x[None, :] * rng.uniform(1, 4) + x[:, None])
    img = base[:, None, None] + stripes[None, :, :]
    img += rng.normal(0, 0.03, (3, size, size))
    return np.clip(img, -1, 1)


def synthetic_pair(rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray, int]:
    """One image, its flat-color layout map, and the shape's class label."""
    img = _textured_background(rng, size)
    layout = np.full((3, size, size), -1.0)
    label = int(rng.integers(len(_SHAPE_COLORS)))
    color = _SHAPE_COLORS[label] * 2.0 - 1.0
    half = max(2, size // 4)
    cy, cx = rng.integers(half, size - half, 2)
    yy, xx = np.mgrid[0:size, 0:size]
    if label % 2 == 0:  # rectangle
        mask = (np.abs(yy - cy) <= half) & (np.abs(xx - cx) <= half)
    else:  # disc
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= half ** 2
    shade = 1.0 - 0.3 * ((yy - cy + half) / (2 * half))
    for ch in range(3):
        img[ch][mask] = np.clip(color[ch] * shade[mask], -1, 1)
        layout[ch][mask] = color[ch]
    return img, layout, label


def make_synthetic_dataset(out_dir, n: int, size: int, seed: int = 0,
                           with_conditions: bool = True) -> Path:
    """Write n PNG images (plus layout maps and labels.txt); returns the dir."""
    out = Path(out_dir)
    img_dir = out / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    cond_dir = out / "conditions"
    if with_conditions:
        cond_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    lines = []
    for i in range(n):
        img, layout, label = synthetic_pair(rng, size)
        name = f"img_{i:04d}.png"
        save_image(img_dir / name, img)
        if with_conditions:
            save_image(cond_dir / name, layout)
        lines.append(f"{name}\t{label}")
    (img_dir / "labels.txt").write_text("\n".join(lines) + "\n")
    return img_dir
