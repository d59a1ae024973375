"""Placement and comparison of probability masks in the image frame."""
from __future__ import annotations

import numpy as np

from .types import ProbMask

__all__ = ["clamp_prob", "resample_grid", "rasterize", "binarize", "mask_iou"]

RESAMPLING_MODES = ("bilinear", "nearest")


def clamp_prob(p, epsilon: float = 1e-7):
    """Clamp probabilities into [epsilon, 1 - epsilon].

    Keeps log-losses finite at exact 0/1 predictions. ``epsilon`` must lie
    in (0, 0.5). Accepts scalars or arrays and mirrors the input kind.
    """
    if not 0.0 < epsilon < 0.5:
        raise ValueError(f"epsilon must lie in (0, 0.5), got {epsilon}")
    if np.isscalar(p):
        return float(min(max(float(p), epsilon), 1.0 - epsilon))
    return np.clip(np.asarray(p, dtype=np.float64), epsilon, 1.0 - epsilon)


def _source_coords(n_out: int, n_in: int) -> np.ndarray:
    # Pixel-centre mapping: output centre i+0.5 lands at (i+0.5)*n_in/n_out.
    return (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5


def resample_grid(grid: np.ndarray, out_shape: tuple[int, int], resampling: str = "bilinear") -> np.ndarray:
    """Resample a 2-D grid to ``out_shape`` with pixel-centre alignment."""
    if resampling not in RESAMPLING_MODES:
        raise ValueError(f"unknown resampling mode {resampling!r}, expected one of {RESAMPLING_MODES}")
    grid = np.asarray(grid, dtype=np.float64)
    out_r, out_c = int(out_shape[0]), int(out_shape[1])
    if out_r <= 0 or out_c <= 0 or grid.size == 0:
        return np.zeros((max(out_r, 0), max(out_c, 0)), dtype=np.float64)
    in_r, in_c = grid.shape
    if (in_r, in_c) == (out_r, out_c):
        return grid.copy()
    if resampling == "nearest":
        src_r = np.floor(_source_coords(out_r, in_r) + 0.5).astype(int).clip(0, in_r - 1)
        src_c = np.floor(_source_coords(out_c, in_c) + 0.5).astype(int).clip(0, in_c - 1)
        return grid[np.ix_(src_r, src_c)]
    rr = np.clip(_source_coords(out_r, in_r), 0.0, in_r - 1.0)
    cc = np.clip(_source_coords(out_c, in_c), 0.0, in_c - 1.0)
    r0 = np.floor(rr).astype(int)
    c0 = np.floor(cc).astype(int)
    r1 = np.minimum(r0 + 1, in_r - 1)
    c1 = np.minimum(c0 + 1, in_c - 1)
    fr = (rr - r0)[:, None]
    fc = (cc - c0)[None, :]
    top = grid[np.ix_(r0, c0)] * (1.0 - fc) + grid[np.ix_(r0, c1)] * fc
    bot = grid[np.ix_(r1, c0)] * (1.0 - fc) + grid[np.ix_(r1, c1)] * fc
    return top * (1.0 - fr) + bot * fr


def rasterize(mask: ProbMask, extent: tuple[int, int], resampling: str = "bilinear") -> np.ndarray:
    """Place a bbox-local heatmap into a full-image probability grid.

    The grid is resampled to the mask's image footprint (when they differ)
    and written at ``mask.origin``; parts falling outside the extent are
    dropped. Everything not covered by the mask is 0.
    """
    rows, cols = int(extent[0]), int(extent[1])
    if rows <= 0 or cols <= 0:
        raise ValueError(f"image extent must be positive, got {extent}")
    out = np.zeros((rows, cols), dtype=np.float64)
    fr, fc = mask.image_footprint()
    if fr == 0 or fc == 0 or mask.grid.size == 0:
        return out
    block = mask.grid if (fr, fc) == mask.grid.shape else resample_grid(mask.grid, (fr, fc), resampling)
    r0, c0 = mask.origin
    rlo, rhi = max(r0, 0), min(r0 + fr, rows)
    clo, chi = max(c0, 0), min(c0 + fc, cols)
    if rlo >= rhi or clo >= chi:
        return out
    out[rlo:rhi, clo:chi] = block[rlo - r0 : rhi - r0, clo - c0 : chi - c0]
    return out


def binarize(grid: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Foreground decision per pixel: probability strictly above threshold."""
    return np.asarray(grid) > threshold


def mask_iou(
    a: ProbMask,
    b: ProbMask,
    extent: tuple[int, int],
    bin_threshold: float = 0.5,
    resampling: str = "bilinear",
) -> float:
    """Intersection-over-union of two masks binarized at ``bin_threshold``.

    Both masks are rasterized to the shared ``extent`` first. Returns 0.0
    when the union is empty.
    """
    fa = binarize(rasterize(a, extent, resampling), bin_threshold)
    fb = binarize(rasterize(b, extent, resampling), bin_threshold)
    inter = np.logical_and(fa, fb).sum()
    union = np.logical_or(fa, fb).sum()
    if union == 0:
        return 0.0
    return float(inter / union)


def binary_iou(a: np.ndarray, b: np.ndarray) -> float:
    """IoU of two already-binary full-image masks (0.0 on empty union)."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    inter = np.logical_and(a, b).sum()
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 0.0
    return float(inter / union)
