"""Gradient-orientation cell descriptors, shared by the color and depth channels.

Unsigned orientation histograms over square pixel cells, normalized over
2x2-cell blocks with clipping (Dalal-Triggs style).  The per-cell descriptor
concatenates the cell's histogram as normalized by each of the four blocks
containing it, giving 4 * bin_count values in [0, 1].

Color rasters use, per pixel, the gradient of the channel with the largest
magnitude.  Depth rasters are treated as a single channel of raw millimeter
values; gradients whose stencil touches an invalid (zero) pixel are dropped
so that sensor holes do not fabricate edges.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_CLIP = 0.2
_EPS = 1e-12


@dataclass(frozen=True)
class FeatureGrid:
    """cells: (Hc, Wc, 4 * bin_count) float64; one descriptor per pixel cell."""

    cells: np.ndarray
    cell_size: int
    bin_count: int

    def __post_init__(self):
        self.cells.setflags(write=False)

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.cells.shape[:2]

    @property
    def depth(self) -> int:
        return self.cells.shape[2]


def _gradients(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradients; zero at the outermost pixels."""
    img = image.astype(np.float64)
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, 1:-1] = img[:, 2:] - img[:, :-2]
    gy[1:-1, :] = img[2:, :] - img[:-2, :]
    return gx, gy


def compute_hog(image: np.ndarray, cell_size: int = 8, bin_count: int = 9) -> FeatureGrid:
    """Descriptor grid for an (H, W) or (H, W, 3) raster.

    Raises ValueError when either image side is smaller than 3 * cell_size.
    """
    if image.ndim not in (2, 3):
        raise ValueError(f"expected 2-D or 3-D raster, got shape {image.shape}")
    h, w = image.shape[:2]
    min_side = 3 * cell_size
    if h < min_side or w < min_side:
        raise ValueError(
            f"image {h}x{w} too small: need at least {min_side}x{min_side} "
            f"for cell_size={cell_size}"
        )

    if image.ndim == 3:
        mags = np.empty(image.shape, dtype=np.float64)
        gxs = np.empty_like(mags)
        gys = np.empty_like(mags)
        for c in range(image.shape[2]):
            gx, gy = _gradients(image[:, :, c])
            gxs[:, :, c], gys[:, :, c] = gx, gy
            mags[:, :, c] = np.hypot(gx, gy)
        pick = np.argmax(mags, axis=2)
        ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        gx = gxs[ii, jj, pick]
        gy = gys[ii, jj, pick]
        mag = mags[ii, jj, pick]
    else:
        gx, gy = _gradients(image)
        mag = np.hypot(gx, gy)
        invalid = image == 0
        if invalid.any():
            # drop gradients whose central-difference stencil saw a hole
            bad = invalid.copy()
            bad[:, 1:-1] |= invalid[:, 2:] | invalid[:, :-2]
            bad[1:-1, :] |= invalid[2:, :] | invalid[:-2, :]
            mag = np.where(bad, 0.0, mag)

    hc, wc = h // cell_size, w // cell_size
    ch, cw = hc * cell_size, wc * cell_size
    mag = mag[:ch, :cw]
    angle = np.mod(np.arctan2(gy[:ch, :cw], gx[:ch, :cw]), np.pi)
    bins = np.minimum((angle / np.pi * bin_count).astype(np.int64), bin_count - 1)

    cell_i = np.repeat(np.arange(hc), cell_size)[:, None]
    cell_j = np.repeat(np.arange(wc), cell_size)[None, :]
    flat = (cell_i * wc + cell_j) * bin_count + bins
    hist = np.bincount(flat.ravel(), weights=mag.ravel(),
                       minlength=hc * wc * bin_count).reshape(hc, wc, bin_count)

    cells = np.zeros((hc, wc, 4 * bin_count), dtype=np.float64)
    # blocks span cells (bi:bi+2, bj:bj+2); slot k = which corner of the block
    # this cell occupies (0 TL, 1 TR, 2 BL, 3 BR)
    corners = [hist[:-1, :-1], hist[:-1, 1:], hist[1:, :-1], hist[1:, 1:]]
    energy = sum((c * c).sum(axis=2) for c in corners)
    norm = np.sqrt(energy + _EPS * _EPS)[:, :, None]
    clipped = [np.minimum(c / norm, _CLIP) for c in corners]
    renorm = np.sqrt(sum((c * c).sum(axis=2) for c in clipped) + _EPS * _EPS)[:, :, None]
    b = bin_count
    cells[:-1, :-1, 0:b] = clipped[0] / renorm
    cells[:-1, 1:, b:2 * b] = clipped[1] / renorm
    cells[1:, :-1, 2 * b:3 * b] = clipped[2] / renorm
    cells[1:, 1:, 3 * b:4 * b] = clipped[3] / renorm
    return FeatureGrid(cells=cells, cell_size=cell_size, bin_count=bin_count)
