"""Bijective orderings between a 2-D index grid and a 1-D token sequence.

Six variants: row_major, alternate (boustrophedon), spiral_out, spiral_in,
z_curve (bit-interleaved) and subsample (coarse-to-fine). z_curve and
subsample require power-of-two grid sides; the others accept any shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError
from .quantizer import IndexGrid

KINDS = ("row_major", "spiral_out", "z_curve", "subsample", "alternate", "spiral_in")


@dataclass(frozen=True)
class ScanOrder:
    kind: str
    h: int
    w: int
    perm: np.ndarray = field(compare=False)  # (h*w, 2): sequence position -> (row, col)
    inverse: np.ndarray = field(compare=False)  # (h, w): cell -> sequence position

    def __len__(self) -> int:
        return self.h * self.w

    def coords(self, t: int) -> tuple[int, int]:
        r, c = self.perm[t]
        return int(r), int(c)

    def position(self, row: int, col: int) -> int:
        return int(self.inverse[row, col])


def _row_major(h, w):
    return [(r, c) for r in range(h) for c in range(w)]


def _alternate(h, w):
    out = []
    for r in range(h):
        cols = range(w) if r % 2 == 0 else range(w - 1, -1, -1)
        out.extend((r, c) for c in cols)
    return out


def _spiral_out(h, w):
    # clockwise from the center cell, first step right; off-grid cells of the
    # unbounded spiral are skipped until all h*w cells have been visited
    r, c = (h + 1) // 2 - 1, (w + 1) // 2 - 1
    out = [(r, c)] if 0 <= r < h and 0 <= c < w else []
    moves = [(0, 1), (1, 0), (0, -1), (-1, 0)]  # right, down, left, up
    run, mi = 1, 0
    while len(out) < h * w:
        for _ in range(2):
            dr, dc = moves[mi % 4]
            for _ in range(run):
                r += dr
                c += dc
                if 0 <= r < h and 0 <= c < w:
                    out.append((r, c))
            mi += 1
        run += 1
    return out[: h * w]


def _require_pow2(kind, h, w):
    for side, name in ((h, "h"), (w, "w")):
        if side & (side - 1):
            raise ConfigError(f"{kind} requires power-of-two grid sides; {name}={side} is not")


def _z_curve(h, w):
    _require_pow2("z_curve", h, w)

    def position(r, c):
        pos = 0
        bit = 0
        rb, cb = r, c
        hb, wb = h, w
        # interleave with column bits in the low positions while both sides
        # still have bits, then append the remaining bits of the longer side
        while hb > 1 or wb > 1:
            if wb > 1:
                pos |= (cb & 1) << bit
                cb >>= 1
                wb >>= 1
                bit += 1
            if hb > 1:
                pos |= (rb & 1) << bit
                rb >>= 1
                hb >>= 1
                bit += 1
        return pos

    cells = sorted(((r, c) for r in range(h) for c in range(w)),
                   key=lambda rc: position(*rc))
    return cells


def _subsample(h, w):
    _require_pow2("subsample", h, w)
    out = []
    seen = set()
    top = int(np.log2(min(h, w)))
    for level in range(top, 0, -1):
        step = 1 << level
        for r in range(0, h, step):
            for c in range(0, w, step):
                if (r, c) not in seen:
                    seen.add((r, c))
                    out.append((r, c))
    for r in range(h):
        for c in range(w):
            if (r, c) not in seen:
                out.append((r, c))
    return out


_BUILDERS = {
    "row_major": _row_major,
    "alternate": _alternate,
    "spiral_out": _spiral_out,
    "spiral_in": lambda h, w: list(reversed(_spiral_out(h, w))),
    "z_curve": _z_curve,
    "subsample": _subsample,
}


def build(kind: str, h: int, w: int) -> ScanOrder:
    """Construct the ordering of the given kind for an h x w grid."""
    if kind not in _BUILDERS:
        raise ConfigError(f"unknown scan order {kind!r}; choose from {KINDS}")
    if h < 1 or w < 1:
        raise ConfigError(f"grid sides must be >= 1, got {h}x{w}")
    cells = _BUILDERS[kind](h, w)
    perm = np.array(cells, dtype=np.int64)
    inverse = np.empty((h, w), dtype=np.int64)
    inverse[perm[:, 0], perm[:, 1]] = np.arange(h * w)
    return ScanOrder(kind=kind, h=h, w=w, perm=perm, inverse=inverse)


def flatten(grid: IndexGrid, order: ScanOrder) -> np.ndarray:
    """Unroll a grid into a sequence: out[t] = grid[perm(t)]."""
    if (grid.h, grid.w) != (order.h, order.w):
        raise ContractError(
            f"grid is {grid.h}x{grid.w} but order was built for {order.h}x{order.w}")
    return grid.values[order.perm[:, 0], order.perm[:, 1]]


def unflatten(seq, order: ScanOrder, K: int) -> IndexGrid:
    """Exact inverse of flatten."""
    seq = np.asarray(seq, dtype=np.int64)
    if seq.shape != (order.h * order.w,):
        raise ContractError(
            f"sequence length {seq.shape} does not match {order.h}x{order.w} grid")
    values = np.empty((order.h, order.w), dtype=np.int64)
    values[order.perm[:, 0], order.perm[:, 1]] = seq
    return IndexGrid(values, K)


def save_perm(path, order: ScanOrder) -> None:
    """Text export of the permutation for inspection: "t row col" per line."""
    with open(path, "w") as f:
        f.write(f"{order.kind} {order.h} {order.w}\n")
        for t, (r, c) in enumerate(order.perm):
            f.write(f"{t} {r} {c}\n")
