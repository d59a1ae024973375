"""Container types shared across the package.

Everything here is a plain dataclass over numpy arrays. Validation happens in
``__post_init__`` so that a constructed object is always consistent; helpers
``check_class_probs`` / ``check_sample_matrix`` are the single validation
path for bare probability arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BBox",
    "ProbMask",
    "Detection",
    "GroundTruthInstance",
    "Frame",
    "check_class_probs",
    "check_sample_matrix",
]

# Tolerance on the sum of a class-probability vector.
PROB_SUM_TOL = 1e-6


def check_class_probs(p, n_classes: int | None = None, allow_subdistribution: bool = False) -> np.ndarray:
    """Validate a class-probability vector and return it as float64.

    Entries must lie in [0, 1] and sum to 1 within 1e-6. With
    ``allow_subdistribution=True`` the sum may fall below 1 (used by the
    fixed-denominator averaging mode, where missing members count as
    zero-probability evidence); it must still not exceed 1.
    """
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"class probabilities must be a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("class probabilities contain non-finite values")
    if arr.min() < -PROB_SUM_TOL or arr.max() > 1.0 + PROB_SUM_TOL:
        raise ValueError(f"class probabilities must lie in [0, 1], got range [{arr.min()}, {arr.max()}]")
    total = float(arr.sum())
    if allow_subdistribution:
        if total > 1.0 + PROB_SUM_TOL or total <= 0.0:
            raise ValueError(f"class probabilities must sum to at most 1, got {total}")
    elif abs(total - 1.0) > PROB_SUM_TOL:
        raise ValueError(f"class probabilities must sum to 1 within {PROB_SUM_TOL}, got {total}")
    if n_classes is not None and arr.size != n_classes:
        raise ValueError(f"expected {n_classes} class probabilities, got {arr.size}")
    return arr


def check_sample_matrix(rows) -> np.ndarray:
    """Validate a (k, D) matrix whose rows are class-probability vectors."""
    mat = np.asarray(rows, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] < 1 or mat.shape[1] < 1:
        raise ValueError(f"sample matrix must be 2-D with at least one row, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise ValueError("sample matrix contains non-finite values")
    if mat.min() < -PROB_SUM_TOL or mat.max() > 1.0 + PROB_SUM_TOL:
        raise ValueError("sample matrix entries must lie in [0, 1]")
    sums = mat.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > PROB_SUM_TOL)
    if bad.size:
        raise ValueError(f"sample matrix row {bad[0]} sums to {sums[bad[0]]}, expected 1 within {PROB_SUM_TOL}")
    return mat


@dataclass
class BBox:
    """Axis-aligned box in image coordinates, (x, y) = top-left corner."""

    x: float
    y: float
    w: float  # width, > 0
    h: float  # height, > 0

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ValueError(f"bbox field {name} is not finite: {v}")
            setattr(self, name, float(v))
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"bbox must have positive extent, got w={self.w}, h={self.h}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)

    def clipped(self, extent: tuple[int, int]) -> "BBox":
        """Clip to the image extent (rows, cols); raises if nothing remains."""
        rows, cols = extent
        x0 = min(max(self.x, 0.0), float(cols))
        y0 = min(max(self.y, 0.0), float(rows))
        x1 = min(max(self.x + self.w, 0.0), float(cols))
        y1 = min(max(self.y + self.h, 0.0), float(rows))
        if x1 - x0 <= 0 or y1 - y0 <= 0:
            raise ValueError(f"bbox {self.as_tuple()} lies fully outside extent {extent}")
        return BBox(x0, y0, x1 - x0, y1 - y0)

    def pixel_bounds(self) -> tuple[int, int, int, int]:
        """Integer (row0, col0, row1, col1) footprint, end-exclusive."""
        r0 = int(round(self.y))
        c0 = int(round(self.x))
        r1 = int(round(self.y + self.h))
        c1 = int(round(self.x + self.w))
        return r0, c0, max(r1, r0 + 1), max(c1, c0 + 1)


@dataclass
class ProbMask:
    """Bbox-local probability heatmap.

    ``grid`` holds per-pixel foreground probabilities. ``origin`` is the
    (row, col) of the grid's top-left corner in the image frame.
    ``footprint`` is the (rows, cols) size of the image region the grid
    covers; ``None`` means the grid is already at image resolution
    (one cell per pixel). A differing footprint is resampled on placement.
    """

    origin: tuple[int, int]  # (row, col) in image frame
    grid: np.ndarray  # (gr, gc) float in [0, 1]
    footprint: tuple[int, int] | None = None  # (rows, cols) covered, None = grid shape

    def __post_init__(self):
        r, c = self.origin
        self.origin = (int(r), int(c))
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.grid.ndim != 2:
            raise ValueError(f"mask grid must be 2-D, got shape {self.grid.shape}")
        if self.grid.size:
            if not np.all(np.isfinite(self.grid)):
                raise ValueError("mask grid contains non-finite values")
            lo, hi = float(self.grid.min()), float(self.grid.max())
            if lo < 0.0 or hi > 1.0:
                raise ValueError(f"mask grid values must lie in [0, 1], got range [{lo}, {hi}]")
        if self.footprint is not None:
            fr, fc = self.footprint
            if fr < 0 or fc < 0:
                raise ValueError(f"mask footprint must be non-negative, got {self.footprint}")
            self.footprint = (int(fr), int(fc))

    @property
    def resolution(self) -> tuple[int, int]:
        return self.grid.shape  # type: ignore[return-value]

    def image_footprint(self) -> tuple[int, int]:
        """Size of the covered image region (rows, cols)."""
        return self.footprint if self.footprint is not None else self.grid.shape


@dataclass
class Detection:
    """One detection from one stochastic forward pass."""

    bbox: BBox
    class_probs: np.ndarray  # (C,) sums to 1
    mask: ProbMask
    sample_index: int = 0  # index of the pass that produced this detection

    def __post_init__(self):
        self.class_probs = check_class_probs(self.class_probs)
        if self.sample_index < 0:
            raise ValueError(f"sample_index must be >= 0, got {self.sample_index}")
        self.sample_index = int(self.sample_index)

    @property
    def argmax_class(self) -> int:
        return int(np.argmax(self.class_probs))

    @property
    def confidence(self) -> float:
        return float(self.class_probs.max())


@dataclass
class GroundTruthInstance:
    """Annotated instance: full-image binary mask plus box and class."""

    bbox: BBox
    class_id: int
    mask: np.ndarray  # (H, W) bool, at least one foreground pixel
    frame_id: str = ""

    def __post_init__(self):
        self.mask = np.asarray(self.mask)
        if self.mask.dtype != np.bool_:
            if not np.isin(self.mask, (0, 1)).all():
                raise ValueError("ground-truth mask must be binary")
            self.mask = self.mask.astype(bool)
        if self.mask.ndim != 2:
            raise ValueError(f"ground-truth mask must be 2-D, got shape {self.mask.shape}")
        if not self.mask.any():
            raise ValueError("ground-truth mask has no foreground pixels")
        if self.class_id < 0:
            raise ValueError(f"class_id must be >= 0, got {self.class_id}")
        self.class_id = int(self.class_id)


@dataclass
class Frame:
    """All detections for one image, grouped by forward pass, plus ground truth."""

    frame_id: str
    image_extent: tuple[int, int]  # (rows, cols)
    passes: list[list[Detection]] = field(default_factory=list)  # passes[m] = detections of pass m
    ground_truth: list[GroundTruthInstance] = field(default_factory=list)

    def __post_init__(self):
        rows, cols = self.image_extent
        if rows <= 0 or cols <= 0:
            raise ValueError(f"image extent must be positive, got {self.image_extent}")
        self.image_extent = (int(rows), int(cols))
        for m, dets in enumerate(self.passes):
            for d in dets:
                if d.sample_index != m:
                    raise ValueError(
                        f"detection in pass {m} carries sample_index {d.sample_index}"
                    )
        for gt in self.ground_truth:
            if gt.mask.shape != self.image_extent:
                raise ValueError(
                    f"ground-truth mask shape {gt.mask.shape} does not match extent {self.image_extent}"
                )

    @property
    def n_passes(self) -> int:
        return len(self.passes)

    def pooled_detections(self) -> list[Detection]:
        """All detections across passes, pass order then within-pass order."""
        return [d for dets in self.passes for d in dets]
