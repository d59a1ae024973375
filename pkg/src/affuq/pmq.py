"""Probability-based mask quality (PMQ) evaluation.

Every ground-truth/observation pair gets a pairwise quality score

    pPMQ = sqrt(Q_S * Q_L)

where Q_L is the observation's probability for the ground-truth class and
Q_S = exp(-(L_FG + L_BG)) scores the probability mask: L_FG is the mean
negative log probability over the ground-truth pixels, L_BG penalises
probability mass placed outside the ground truth (summed over the detected
pixels outside the mask, normalised by the ground-truth pixel count). Both
losses clamp probabilities away from 0/1 to stay finite.

Optimal one-to-one matching per frame (Hungarian, maximising total pPMQ)
splits instances into true positives, false negatives, and false positives;
the dataset-level score is

    PMQ = sum of matched pPMQ / (N_TP + N_FN + N_FP).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import UndefinedMetricError
from .fusion import Observation
from .masks import clamp_prob, rasterize
from .types import GroundTruthInstance

__all__ = [
    "PairQuality",
    "FrameAssignment",
    "PerClassPMQ",
    "PMQResult",
    "q_label",
    "fg_loss",
    "bg_loss",
    "q_spatial",
    "pairwise_pmq",
    "assign_hungarian",
    "evaluate_frame",
    "aggregate_pmq",
]

# A match below this pairwise quality does not count as a true positive.
VALIDITY_FLOOR = 1e-12
# Pixels with fused foreground probability above this are "detected" for L_BG.
DETECTION_FLOOR = 1e-3


def q_label(gt_class: int, class_probs: np.ndarray) -> float:
    """Probability the observation assigns to the ground-truth class."""
    probs = np.asarray(class_probs, dtype=np.float64)
    if not 0 <= gt_class < probs.size:
        raise ValueError(
            f"ground-truth class {gt_class} is outside the {probs.size}-class probability vector"
        )
    return float(probs[gt_class])


def _check_spatial_inputs(gt_mask: np.ndarray, heat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gt = np.asarray(gt_mask, dtype=bool)
    heat = np.asarray(heat, dtype=np.float64)
    if gt.shape != heat.shape:
        raise ValueError(f"mask shapes differ: ground truth {gt.shape} vs heatmap {heat.shape}")
    if not gt.any():
        raise ValueError("ground-truth mask has no foreground pixels")
    return gt, heat


def fg_loss(gt_mask: np.ndarray, heat: np.ndarray, epsilon: float = 1e-7) -> float:
    """Mean negative log probability over the ground-truth foreground pixels."""
    gt, heat = _check_spatial_inputs(gt_mask, heat)
    return float(-np.log(clamp_prob(heat[gt], epsilon)).mean())


def bg_loss(
    gt_mask: np.ndarray,
    heat: np.ndarray,
    epsilon: float = 1e-7,
    detection_floor: float = DETECTION_FLOOR,
) -> float:
    """Penalty for probability mass detected outside the ground truth.

    Sums ``-log(1 - p)`` over the pixels where the heatmap exceeds
    ``detection_floor`` but the ground truth is background, then divides by
    the ground-truth pixel count.
    """
    gt, heat = _check_spatial_inputs(gt_mask, heat)
    spurious = heat[np.logical_and(heat > detection_floor, ~gt)]
    if spurious.size == 0:
        return 0.0
    return float(-np.log1p(-clamp_prob(spurious, epsilon)).sum() / gt.sum())


def q_spatial(
    gt: GroundTruthInstance,
    obs: Observation,
    epsilon: float = 1e-7,
    resampling: str = "bilinear",
) -> float:
    """Spatial quality exp(-(L_FG + L_BG)) of one observation against one instance."""
    heat = rasterize(obs.mask_mean, gt.mask.shape, resampling)
    return float(np.exp(-(fg_loss(gt.mask, heat, epsilon) + bg_loss(gt.mask, heat, epsilon))))


@dataclass
class PairQuality:
    """Quality breakdown of one (ground truth, observation) pair."""

    gt_index: int
    obs_index: int
    q_label: float
    q_spatial: float
    ppmq: float


@dataclass
class FrameAssignment:
    """Hungarian matching outcome for one frame."""

    matches: list[tuple[int, int, float]]  # (gt_index, obs_index, ppmq) per TP
    n_tp: int
    n_fp: int
    n_fn: int
    q: np.ndarray  # pPMQ of the TP matches, same order as `matches`
    pairs: list[PairQuality] = field(default_factory=list)  # detail rows for TPs
    gt_classes: list[int] = field(default_factory=list)
    obs_classes: list[int] = field(default_factory=list)


def _pair_matrices(
    gts: list[GroundTruthInstance],
    observations: list[Observation],
    epsilon: float = 1e-7,
    resampling: str = "bilinear",
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n_gt, n_obs = len(gts), len(observations)
    ql = np.zeros((n_gt, n_obs))
    qs = np.zeros((n_gt, n_obs))
    heats = [rasterize(o.mask_mean, gts[0].mask.shape, resampling) for o in observations] if n_gt else []
    for i, gt in enumerate(gts):
        for j, obs in enumerate(observations):
            ql[i, j] = q_label(gt.class_id, obs.class_probs_mean)
            qs[i, j] = np.exp(-(fg_loss(gt.mask, heats[j], epsilon) + bg_loss(gt.mask, heats[j], epsilon)))
    return np.sqrt(qs * ql), ql, qs


def pairwise_pmq(
    gts: list[GroundTruthInstance],
    observations: list[Observation],
    epsilon: float = 1e-7,
    resampling: str = "bilinear",
) -> np.ndarray:
    """(n_gt, n_obs) matrix of pairwise quality scores in [0, 1]."""
    ppmq, _, _ = _pair_matrices(gts, observations, epsilon, resampling)
    return ppmq


def assign_hungarian(ppmq: np.ndarray, validity_floor: float = VALIDITY_FLOOR) -> FrameAssignment:
    """Optimal one-to-one matching of a pairwise quality matrix.

    Maximises the summed pPMQ over all one-to-one assignments; matched pairs
    at or below ``validity_floor`` are discarded (their ground truth counts
    as a false negative and the observation as a false positive).
    """
    ppmq = np.asarray(ppmq, dtype=np.float64)
    if ppmq.ndim != 2:
        raise ValueError(f"expected a 2-D quality matrix, got shape {ppmq.shape}")
    n_gt, n_obs = ppmq.shape
    matches: list[tuple[int, int, float]] = []
    if n_gt and n_obs:
        rows, cols = linear_sum_assignment(ppmq, maximize=True)
        for i, j in zip(rows, cols):
            score = float(ppmq[i, j])
            if score > validity_floor:
                matches.append((int(i), int(j), score))
    n_tp = len(matches)
    return FrameAssignment(
        matches=matches,
        n_tp=n_tp,
        n_fp=n_obs - n_tp,
        n_fn=n_gt - n_tp,
        q=np.array([m[2] for m in matches], dtype=np.float64),
    )


def evaluate_frame(
    gts: list[GroundTruthInstance],
    observations: list[Observation],
    epsilon: float = 1e-7,
    resampling: str = "bilinear",
    validity_floor: float = VALIDITY_FLOOR,
) -> FrameAssignment:
    """Match one frame's observations against its ground truth."""
    ppmq, ql, qs = _pair_matrices(gts, observations, epsilon, resampling)
    out = assign_hungarian(ppmq, validity_floor)
    out.pairs = [
        PairQuality(gt_index=i, obs_index=j, q_label=float(ql[i, j]), q_spatial=float(qs[i, j]), ppmq=score)
        for i, j, score in out.matches
    ]
    out.gt_classes = [gt.class_id for gt in gts]
    out.obs_classes = [obs.class_id for obs in observations]
    return out


@dataclass
class PerClassPMQ:
    """Diagnostic per-class view of the matching outcome."""

    pmq: float
    mean_q_label: float
    mean_q_spatial: float
    n_tp: int
    n_fp: int
    n_fn: int


@dataclass
class PMQResult:
    """Dataset-level PMQ aggregation."""

    pmq: float
    mean_ppmq_over_tp: float
    n_tp: int
    n_fp: int
    n_fn: int
    frames: list[FrameAssignment]
    per_class: dict[int, PerClassPMQ] = field(default_factory=dict)


def aggregate_pmq(assignments: list[FrameAssignment]) -> PMQResult:
    """Micro-average frame assignments into the dataset PMQ.

    The denominator counts every ground-truth instance and every unmatched
    observation exactly once: N_TP + N_FN + N_FP. Raises
    UndefinedMetricError when that denominator is zero (no instances and no
    detections anywhere).
    """
    n_tp = sum(a.n_tp for a in assignments)
    n_fp = sum(a.n_fp for a in assignments)
    n_fn = sum(a.n_fn for a in assignments)
    denominator = n_tp + n_fp + n_fn
    if denominator == 0:
        raise UndefinedMetricError("PMQ is undefined: no ground truth and no observations")
    total_q = float(sum(float(a.q.sum()) for a in assignments))
    pmq = total_q / denominator
    mean_ppmq = total_q / n_tp if n_tp else 0.0

    sums: dict[int, dict[str, float]] = {}

    def _cls(c: int) -> dict[str, float]:
        return sums.setdefault(c, {"q": 0.0, "ql": 0.0, "qs": 0.0, "tp": 0, "fp": 0, "fn": 0})

    for a in assignments:
        matched_gt = {i for i, _, _ in a.matches}
        matched_obs = {j for _, j, _ in a.matches}
        for pair in a.pairs:
            rec = _cls(a.gt_classes[pair.gt_index])
            rec["q"] += pair.ppmq
            rec["ql"] += pair.q_label
            rec["qs"] += pair.q_spatial
            rec["tp"] += 1
        for i, c in enumerate(a.gt_classes):
            if i not in matched_gt:
                _cls(c)["fn"] += 1
        for j, c in enumerate(a.obs_classes):
            if j not in matched_obs:
                _cls(c)["fp"] += 1

    per_class = {}
    for c, rec in sorted(sums.items()):
        denom_c = rec["tp"] + rec["fp"] + rec["fn"]
        per_class[c] = PerClassPMQ(
            pmq=rec["q"] / denom_c if denom_c else 0.0,
            mean_q_label=rec["ql"] / rec["tp"] if rec["tp"] else 0.0,
            mean_q_spatial=rec["qs"] / rec["tp"] if rec["tp"] else 0.0,
            n_tp=int(rec["tp"]),
            n_fp=int(rec["fp"]),
            n_fn=int(rec["fn"]),
        )
    return PMQResult(
        pmq=pmq,
        mean_ppmq_over_tp=mean_ppmq,
        n_tp=n_tp,
        n_fp=n_fp,
        n_fn=n_fn,
        frames=list(assignments),
        per_class=per_class,
    )
