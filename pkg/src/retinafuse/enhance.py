"""Global histogram equalization and contrast-limited adaptive equalization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_BINS = 256


@dataclass(frozen=True)
class ClaheParams:
    """Tile grid and clip limit for :func:`clahe`.

    ``clip_limit`` is a fraction of the tile pixel count allowed per bin.
    The defaults match the usual ``adapthisteq`` settings.
    """

    tiles_x: int = 8
    tiles_y: int = 8
    clip_limit: float = 0.01
    bins: int = N_BINS

    def __post_init__(self):
        if self.tiles_x < 1 or self.tiles_y < 1:
            raise ValueError("tile counts must be positive")
        if not 0.0 < self.clip_limit <= 1.0:
            raise ValueError("clip_limit must lie in (0, 1]")
        if self.bins != N_BINS:
            raise ValueError("only 256 bins are supported")


def quantize(img: np.ndarray) -> np.ndarray:
    """Bin index ``floor(v*255 + 0.5)`` of every pixel."""
    return np.floor(np.asarray(img, dtype=np.float64) * 255.0 + 0.5).astype(np.intp)


def histogram(img: np.ndarray, bins: int = N_BINS) -> np.ndarray:
    if bins != N_BINS:
        raise ValueError("only 256 bins are supported")
    return np.bincount(quantize(img).ravel(), minlength=N_BINS)


def _equalize_lut(counts: np.ndarray) -> np.ndarray | None:
    """Level -> output value table, or None for a single-level histogram."""
    cdf = np.cumsum(counts)
    total = int(cdf[-1])
    cdf_min = int(cdf[np.flatnonzero(counts)[0]])
    if total == cdf_min:
        return None
    levels = np.floor(255.0 * (cdf - cdf_min) / (total - cdf_min) + 0.5)
    return np.clip(levels, 0.0, 255.0) / 255.0


def hist_equalize(img: np.ndarray) -> np.ndarray:
    """Global histogram equalization onto the 256 output levels.

    A single-level image is returned unchanged.
    """
    img = np.asarray(img, dtype=np.float64)
    lut = _equalize_lut(histogram(img))
    if lut is None:
        return img.copy()
    return lut[quantize(img)]


def _tile_edges(n: int, tiles: int) -> np.ndarray:
    return (np.arange(tiles + 1) * n) // tiles


def clip_histogram(counts: np.ndarray, limit: int) -> np.ndarray:
    """Clip at ``limit`` and spread the excess evenly in a single pass.

    The remainder of the integer division goes to the last bin.
    """
    counts = np.asarray(counts, dtype=np.int64)
    excess = int(np.maximum(counts - limit, 0).sum())
    clipped = np.minimum(counts, limit)
    if excess:
        clipped = clipped + excess // counts.size
        clipped[-1] += excess % counts.size
    return clipped


def tile_luts(img: np.ndarray, p: ClaheParams) -> np.ndarray:
    """Per-tile transfer tables, shape ``(tiles_y, tiles_x, 256)``."""
    levels = quantize(img)
    h, w = levels.shape
    ys, xs = _tile_edges(h, p.tiles_y), _tile_edges(w, p.tiles_x)
    identity = np.arange(N_BINS) / 255.0
    luts = np.empty((p.tiles_y, p.tiles_x, N_BINS))
    for ty in range(p.tiles_y):
        for tx in range(p.tiles_x):
            tile = levels[ys[ty] : ys[ty + 1], xs[tx] : xs[tx + 1]]
            counts = np.bincount(tile.ravel(), minlength=N_BINS)
            if np.count_nonzero(counts) == 1:
                luts[ty, tx] = identity
                continue
            limit = max(1, int(np.floor(p.clip_limit * tile.size)))
            lut = _equalize_lut(clip_histogram(counts, limit))
            luts[ty, tx] = identity if lut is None else lut
    return luts


def _blend_coords(n: int, tiles: int):
    edges = _tile_edges(n, tiles)
    centers = (edges[:-1] + edges[1:]) / 2.0
    pos = np.arange(n) + 0.5
    # fractional tile index, clamped so border pixels use the nearest tile only
    t = np.interp(pos, centers, np.arange(tiles, dtype=np.float64))
    lo = np.floor(t).astype(np.intp)
    hi = np.minimum(lo + 1, tiles - 1)
    return lo, hi, t - lo


def clahe(img: np.ndarray, p: ClaheParams | None = None) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization.

    Each output pixel blends the transfer tables of the (up to) four tiles
    whose centers surround it.
    """
    p = p or ClaheParams()
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if p.tiles_y > h or p.tiles_x > w:
        raise ValueError(f"tile grid {p.tiles_x}x{p.tiles_y} exceeds image {w}x{h}")
    levels = quantize(img)
    if np.all(levels == levels.flat[0]):
        return img.copy()
    luts = tile_luts(img, p)
    if p.tiles_x == 1 and p.tiles_y == 1:
        return luts[0, 0][levels]
    y0, y1, fy = _blend_coords(h, p.tiles_y)
    x0, x1, fx = _blend_coords(w, p.tiles_x)
    Y0, Y1, FY = y0[:, None], y1[:, None], fy[:, None]
    X0, X1, FX = x0[None, :], x1[None, :], fx[None, :]
    top = (1.0 - FX) * luts[Y0, X0, levels] + FX * luts[Y0, X1, levels]
    bottom = (1.0 - FX) * luts[Y1, X0, levels] + FX * luts[Y1, X1, levels]
    out = (1.0 - FY) * top + FY * bottom
    return np.clip(out, 0.0, 1.0)
