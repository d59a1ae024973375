"""Calibration and uncertainty-quality metrics.

Implements the three evaluation tools used on fused observations:

* expected calibration error over equal-width confidence bins,
* Brier scores (multiclass per detection, binary per pixel),
* sparsification curves and their area (AUSE), which measure whether the
  estimated variance ranks samples by their true error.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import UndefinedMetricError

__all__ = [
    "CalibSample",
    "ece",
    "brier_score",
    "brier_scores",
    "spatial_brier",
    "SparsificationCurve",
    "sparsification_curve",
    "ause",
    "semantic_ause",
    "spatial_ause",
]

_trapezoid = getattr(np, "trapezoid", None) or np.trapz  # numpy 2 renamed trapz


@dataclass
class CalibSample:
    """One calibration record (a matched detection, or any scored event)."""

    confidence: float  # predicted confidence in [0, 1]
    correct: bool  # whether the prediction was right
    probs: np.ndarray | None = None  # full class distribution, if available
    gt_class: int | None = None
    variance: float = 0.0  # estimated predictive variance

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")
        if self.variance < 0.0:
            raise ValueError(f"variance must be >= 0, got {self.variance}")
        self.confidence = float(self.confidence)
        self.correct = bool(self.correct)
        self.variance = float(self.variance)


def ece(confidence, correct, n_bins: int = 10) -> float:
    """Expected calibration error over equal-width confidence bins.

    Bins partition [0, 1] into ``n_bins`` equal intervals; every bin is
    closed on the left and open on the right except the last, which includes
    1.0. Each non-empty bin contributes its sample share times the absolute
    gap between mean confidence and accuracy.
    """
    conf = np.asarray(confidence, dtype=np.float64).ravel()
    corr = np.asarray(correct, dtype=bool).ravel()
    if conf.size == 0:
        raise UndefinedMetricError("ECE is undefined on an empty sample set")
    if conf.size != corr.size:
        raise ValueError(f"confidence and correctness disagree in length: {conf.size} vs {corr.size}")
    if conf.min() < 0.0 or conf.max() > 1.0:
        raise ValueError("confidences must lie in [0, 1]")
    if n_bins < 1:
        raise ValueError(f"n_bins must be >= 1, got {n_bins}")
    idx = np.minimum((conf * n_bins).astype(int), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins).astype(np.float64)
    conf_sums = np.bincount(idx, weights=conf, minlength=n_bins)
    acc_sums = np.bincount(idx, weights=corr.astype(np.float64), minlength=n_bins)
    filled = counts > 0
    gaps = np.abs(acc_sums[filled] / counts[filled] - conf_sums[filled] / counts[filled])
    return float((counts[filled] / conf.size * gaps).sum())


def brier_score(class_probs, gt_class: int) -> float:
    """Squared distance between one class distribution and the one-hot truth."""
    probs = np.asarray(class_probs, dtype=np.float64)
    if not 0 <= gt_class < probs.size:
        raise ValueError(f"class {gt_class} is outside the {probs.size}-class vector")
    onehot = np.zeros(probs.size)
    onehot[gt_class] = 1.0
    return float(((probs - onehot) ** 2).sum())


def brier_scores(probs, gt_classes) -> np.ndarray:
    """Vectorized multiclass Brier score, one value per row of ``probs``."""
    mat = np.asarray(probs, dtype=np.float64)
    cls = np.asarray(gt_classes, dtype=int)
    if mat.ndim != 2 or cls.shape != (mat.shape[0],):
        raise ValueError(f"expected (N, C) probabilities and (N,) classes, got {mat.shape} and {cls.shape}")
    if cls.size and (cls.min() < 0 or cls.max() >= mat.shape[1]):
        raise ValueError("ground-truth class index outside the probability vector")
    onehot = np.zeros_like(mat)
    onehot[np.arange(cls.size), cls] = 1.0
    return ((mat - onehot) ** 2).sum(axis=1)


def spatial_brier(prob, is_foreground) -> np.ndarray:
    """Binary per-pixel Brier score: (p - 1)^2 on foreground, p^2 on background."""
    p = np.asarray(prob, dtype=np.float64)
    fg = np.asarray(is_foreground, dtype=bool)
    if p.shape != fg.shape:
        raise ValueError(f"probability and label shapes differ: {p.shape} vs {fg.shape}")
    return np.where(fg, (p - 1.0) ** 2, p**2)


@dataclass
class SparsificationCurve:
    """Error-vs-removal curves for estimated and oracle orderings.

    Both curves are normalised by the full-set mean error, so they start at
    1.0. ``ause`` is the trapezoidal area between them divided by the
    largest removal fraction.
    """

    fractions: np.ndarray  # removal fractions, 0 .. f_max
    model_curve: np.ndarray  # remaining mean error, removing by estimated variance
    oracle_curve: np.ndarray  # remaining mean error, removing by true error
    ause: float


def _remaining_means(errors: np.ndarray, order: np.ndarray, removals: np.ndarray) -> np.ndarray:
    # mean error of the samples left after dropping the first r of `order`
    removed_mass = np.concatenate(([0.0], np.cumsum(errors[order])))
    total = removed_mass[-1]
    return (total - removed_mass[removals]) / (errors.size - removals)


def sparsification_curve(
    errors,
    variances,
    n_steps: int = 100,
    f_max: float = 0.99,
) -> SparsificationCurve:
    """Sparsification analysis of a variance estimate against true errors.

    At each removal fraction f (a uniform grid of ``n_steps`` points from 0
    to ``f_max``) the ``ceil(f * N)`` samples with the largest estimated
    variance are dropped and the mean error of the remainder is recorded;
    the oracle drops by true error instead. Ties are broken by input
    position (stable). Removals are capped at N - 1 so the remainder is
    never empty. Raises when fewer than two samples are given or when the
    mean error of the full set is zero (nothing to normalise by).
    """
    err = np.asarray(errors, dtype=np.float64).ravel()
    var = np.asarray(variances, dtype=np.float64).ravel()
    if err.size != var.size:
        raise ValueError(f"errors and variances disagree in length: {err.size} vs {var.size}")
    if err.size < 2:
        raise UndefinedMetricError("sparsification needs at least two samples")
    if not (np.isfinite(err).all() and np.isfinite(var).all()):
        raise ValueError("errors and variances must be finite")
    if n_steps < 2:
        raise ValueError(f"n_steps must be >= 2, got {n_steps}")
    if not 0.0 < f_max < 1.0:
        raise ValueError(f"f_max must lie in (0, 1), got {f_max}")
    base = err.mean()
    if base <= 0.0:
        raise UndefinedMetricError("sparsification is undefined for an all-zero error vector")

    fractions = np.linspace(0.0, f_max, n_steps)
    removals = np.minimum(np.ceil(fractions * err.size).astype(int), err.size - 1)
    order_model = np.argsort(-var, kind="stable")
    order_oracle = np.argsort(-err, kind="stable")
    model_curve = _remaining_means(err, order_model, removals) / base
    oracle_curve = _remaining_means(err, order_oracle, removals) / base
    area = float(_trapezoid(model_curve - oracle_curve, fractions) / f_max)
    return SparsificationCurve(
        fractions=fractions,
        model_curve=model_curve,
        oracle_curve=oracle_curve,
        ause=area,
    )


def ause(errors, variances, n_steps: int = 100, f_max: float = 0.99) -> float:
    """Area between the estimated and oracle sparsification curves."""
    return sparsification_curve(errors, variances, n_steps, f_max).ause


def semantic_ause(probs, gt_classes, variances, n_steps: int = 100, f_max: float = 0.99) -> SparsificationCurve:
    """Sparsification of per-detection Brier errors by semantic variance."""
    errors = brier_scores(probs, gt_classes)
    return sparsification_curve(errors, variances, n_steps, f_max)


def spatial_ause(pixel_probs, pixel_fg, variances, n_steps: int = 100, f_max: float = 0.99) -> SparsificationCurve:
    """Sparsification of per-pixel Brier errors by spatial variance."""
    errors = spatial_brier(pixel_probs, pixel_fg)
    return sparsification_curve(errors, variances, n_steps, f_max)
