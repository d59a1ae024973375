"""Averaging of clustered detections and the two-way uncertainty split.

Given the k member detections of one cluster, fusion produces a single
Observation: component-wise mean bbox, mean class-probability vector, mean
probability mask, plus uncertainty. The predictive spread decomposes into

* epistemic covariance  ``mean_m (p_m - p̄)(p_m - p̄)^T``  — disagreement
  between passes, vanishes when all members agree;
* aleatoric covariance  ``mean_m (diag(p_m) - p_m p_m^T)`` — spread inside
  each pass's own categorical distribution, vanishes only for one-hot rows.

Their sum obeys the law of total variance:
``epistemic + aleatoric = mean_m diag(p_m) - p̄ p̄^T``.

The same split applied per pixel to the members' foreground probabilities
(D = 1) gives the spatial maps: ``mean_m (p_m(x) - p̄(x))^2`` and
``mean_m p_m(x)(1 - p_m(x))``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import ObservationCluster
from .masks import rasterize
from .types import BBox, ProbMask, check_class_probs, check_sample_matrix

__all__ = [
    "UncertaintyMaps",
    "Observation",
    "epistemic_cov",
    "aleatoric_cov",
    "total_cov",
    "semantic_uncertainty",
    "spatial_uncertainty",
    "fuse_cluster",
]

DENOMINATORS = ("k", "M")


def epistemic_cov(samples) -> np.ndarray:
    """(D, D) covariance of the rows around their mean, divided by the row count."""
    mat = check_sample_matrix(samples)
    centred = mat - mat.mean(axis=0)
    return centred.T @ centred / mat.shape[0]


def aleatoric_cov(samples) -> np.ndarray:
    """(D, D) mean categorical covariance of the rows: mean of diag(p) - p p^T."""
    mat = check_sample_matrix(samples)
    k = mat.shape[0]
    return np.diag(mat.mean(axis=0)) - mat.T @ mat / k


def total_cov(samples) -> np.ndarray:
    """Sum of the epistemic and aleatoric parts.

    Algebraically equal to ``diag(mean_m p_m) - p̄ p̄^T``; computed as the sum
    so the identity stays a checkable property rather than an assumption.
    """
    return epistemic_cov(samples) + aleatoric_cov(samples)


def semantic_uncertainty(samples) -> tuple[float, float]:
    """Traces of the epistemic and aleatoric covariance matrices."""
    return float(np.trace(epistemic_cov(samples))), float(np.trace(aleatoric_cov(samples)))


def spatial_uncertainty(stack: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel uncertainty split of a (k, rows, cols) probability stack.

    Returns ``(epistemic, aleatoric)`` maps: the per-pixel variance of the
    member probabilities and the per-pixel mean of ``p (1 - p)``.
    """
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim != 3 or stack.shape[0] < 1:
        raise ValueError(f"expected a (k, rows, cols) stack with k >= 1, got shape {stack.shape}")
    mean = stack.mean(axis=0)
    epistemic = ((stack - mean) ** 2).mean(axis=0)
    aleatoric = (stack * (1.0 - stack)).mean(axis=0)
    return epistemic, aleatoric


@dataclass
class UncertaintyMaps:
    """Uncertainty attached to one observation.

    The spatial maps share the observation's mask footprint (same origin and
    shape as ``Observation.mask_mean``). Semantic scalars are covariance
    traces over the class dimension.
    """

    spatial_epistemic: np.ndarray  # per-pixel variance across members
    spatial_aleatoric: np.ndarray  # per-pixel mean p(1-p)
    semantic_epistemic: float
    semantic_aleatoric: float

    def __post_init__(self):
        self.spatial_epistemic = np.asarray(self.spatial_epistemic, dtype=np.float64)
        self.spatial_aleatoric = np.asarray(self.spatial_aleatoric, dtype=np.float64)
        if self.spatial_epistemic.shape != self.spatial_aleatoric.shape:
            raise ValueError("spatial uncertainty maps must share one shape")
        if self.semantic_epistemic < 0 or self.semantic_aleatoric < 0:
            raise ValueError("semantic uncertainty must be non-negative")
        self.semantic_epistemic = float(self.semantic_epistemic)
        self.semantic_aleatoric = float(self.semantic_aleatoric)


@dataclass
class Observation:
    """Fused object hypothesis with its uncertainty."""

    bbox_mean: BBox
    class_probs_mean: np.ndarray  # (C,) sums to 1 (k mode) or <= 1 (M mode)
    mask_mean: ProbMask
    k: int  # number of member detections
    uncertainty: UncertaintyMaps

    def __post_init__(self):
        self.class_probs_mean = check_class_probs(self.class_probs_mean, allow_subdistribution=True)
        if self.k < 1:
            raise ValueError(f"an observation needs at least one member, got k={self.k}")
        self.k = int(self.k)
        if self.uncertainty.spatial_epistemic.shape != self.mask_mean.grid.shape:
            raise ValueError("uncertainty maps must match the mask grid shape")

    @property
    def class_id(self) -> int:
        return int(np.argmax(self.class_probs_mean))

    @property
    def confidence(self) -> float:
        return float(self.class_probs_mean.max())


def _union_footprint(cluster: ObservationCluster, extent: tuple[int, int]) -> tuple[int, int, int, int]:
    rows, cols = extent
    r0 = min(m.mask.origin[0] for m in cluster.members)
    c0 = min(m.mask.origin[1] for m in cluster.members)
    r1 = max(m.mask.origin[0] + m.mask.image_footprint()[0] for m in cluster.members)
    c1 = max(m.mask.origin[1] + m.mask.image_footprint()[1] for m in cluster.members)
    r0, c0 = max(r0, 0), max(c0, 0)
    r1, c1 = min(r1, rows), min(c1, cols)
    if r1 <= r0 or c1 <= c0:
        raise ValueError("cluster masks lie fully outside the image extent")
    return r0, c0, r1, c1


def fuse_cluster(
    cluster: ObservationCluster,
    extent: tuple[int, int],
    denominator: str = "k",
    n_passes: int | None = None,
    resampling: str = "bilinear",
) -> Observation:
    """Average a cluster's members into one Observation with uncertainty.

    ``denominator`` selects the averaging mode for the class probabilities
    and the mask: ``"k"`` divides by the member count (mean over detections
    actually present); ``"M"`` divides by ``n_passes``, treating passes that
    missed the object as zero-probability evidence of absence, which makes
    the fused class vector a subdistribution. The bbox is always the mean of
    the k member boxes, and the uncertainty split is always computed over
    the k members present.
    """
    if denominator not in DENOMINATORS:
        raise ValueError(f"unknown denominator {denominator!r}, expected one of {DENOMINATORS}")
    k = cluster.k
    if denominator == "M":
        if n_passes is None:
            raise ValueError("denominator 'M' requires n_passes")
        if n_passes < k:
            raise ValueError(f"n_passes={n_passes} is smaller than the cluster size k={k}")
    denom = k if denominator == "k" else int(n_passes)  # type: ignore[arg-type]

    rows = np.stack([m.class_probs for m in cluster.members])  # (k, C)
    class_probs_mean = rows.sum(axis=0) / denom
    if denominator == "k":
        class_probs_mean = check_class_probs(class_probs_mean)

    boxes = np.array([m.bbox.as_tuple() for m in cluster.members])  # (k, 4)
    bx, by, bw, bh = boxes.mean(axis=0)
    bbox_mean = BBox(bx, by, bw, bh)

    r0, c0, r1, c1 = _union_footprint(cluster, extent)
    stack = np.stack(
        [rasterize(m.mask, extent, resampling)[r0:r1, c0:c1] for m in cluster.members]
    )  # (k, fr, fc)
    mask_grid = stack.sum(axis=0) / denom
    mask_mean = ProbMask(origin=(r0, c0), grid=mask_grid)

    spat_epi, spat_alea = spatial_uncertainty(stack)
    sem_epi, sem_alea = semantic_uncertainty(rows)
    maps = UncertaintyMaps(
        spatial_epistemic=spat_epi,
        spatial_aleatoric=spat_alea,
        semantic_epistemic=sem_epi,
        semantic_aleatoric=sem_alea,
    )
    return Observation(
        bbox_mean=bbox_mean,
        class_probs_mean=class_probs_mean,
        mask_mean=mask_mean,
        k=k,
        uncertainty=maps,
    )
