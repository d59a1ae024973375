"""Metrics report: PMQ plus semantic and spatial calibration in one dict.

The semantic table has one row per Hungarian-matched observation (its class
distribution against the matched ground-truth class; variance = semantic
epistemic + aleatoric trace). Unmatched observations are excluded from
calibration and appear only in the counts.

The spatial table has one row per (observation, footprint pixel) — only
pixels that actually carry an estimated variance. The pixel label is
membership in the matched instance's mask; for unmatched observations it is
membership in the union of the frame's ground-truth masks, so a duplicate
detection of a real object is not scored as all-background.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibration import (
    SparsificationCurve,
    brier_scores,
    ece,
    spatial_brier,
    sparsification_curve,
)
from .exceptions import FrameAlignmentError, UndefinedMetricError
from .fusion import Observation
from .io import Dataset, ObservationsFile
from .masks import rasterize
from .pmq import VALIDITY_FLOOR, aggregate_pmq, evaluate_frame
from .types import Frame, ProbMask

__all__ = ["EvalConfig", "build_report"]


@dataclass
class EvalConfig:
    """Knobs of the evaluation stage."""

    epsilon: float = 1e-7  # probability clamp in the PMQ losses
    n_bins: int = 10  # ECE bins
    n_steps: int = 100  # sparsification grid size
    f_max: float = 0.99  # largest removal fraction
    resampling: str = "bilinear"
    validity_floor: float = VALIDITY_FLOOR

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "n_bins": self.n_bins,
            "n_steps": self.n_steps,
            "f_max": self.f_max,
            "resampling": self.resampling,
            "validity_floor": self.validity_floor,
        }


def _align_frames(dataset: Dataset, obs_file: ObservationsFile) -> list[tuple[Frame, list[Observation]]]:
    if list(dataset.classes) != list(obs_file.classes):
        raise FrameAlignmentError(
            f"class lists differ between ground truth ({dataset.classes}) and observations ({obs_file.classes})"
        )
    if tuple(dataset.image_extent) != tuple(obs_file.image_extent):
        raise FrameAlignmentError(
            f"image extents differ: ground truth {dataset.image_extent} vs observations {obs_file.image_extent}"
        )
    gt_frames = {f.frame_id: f for f in dataset.frames}
    obs_frames = {f.frame_id: f.observations for f in obs_file.frames}
    missing_in_obs = sorted(set(gt_frames) - set(obs_frames))
    missing_in_gt = sorted(set(obs_frames) - set(gt_frames))
    if missing_in_obs or missing_in_gt:
        parts = []
        if missing_in_obs:
            parts.append(f"frames missing from observations: {', '.join(missing_in_obs)}")
        if missing_in_gt:
            parts.append(f"frames missing from ground truth: {', '.join(missing_in_gt)}")
        raise FrameAlignmentError("; ".join(parts))
    return [(gt_frames[fid], obs_frames[fid]) for fid in sorted(gt_frames)]


def _observation_pixel_rows(
    obs: Observation,
    gt_mask: np.ndarray,
    extent: tuple[int, int],
    resampling: str,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(probs, labels, variances) for the pixels under one observation."""
    rows, cols = extent
    r0, c0 = obs.mask_mean.origin
    fr, fc = obs.mask_mean.image_footprint()
    rlo, rhi = max(r0, 0), min(r0 + fr, rows)
    clo, chi = max(c0, 0), min(c0 + fc, cols)
    if rlo >= rhi or clo >= chi:
        return np.zeros(0), np.zeros(0, dtype=bool), np.zeros(0)
    window = (slice(rlo, rhi), slice(clo, chi))
    prob = rasterize(obs.mask_mean, extent, resampling)[window]
    var_mask = ProbMask(
        origin=obs.mask_mean.origin,
        grid=np.clip(
            obs.uncertainty.spatial_epistemic + obs.uncertainty.spatial_aleatoric, 0.0, 1.0
        ),
        footprint=obs.mask_mean.footprint,
    )
    var = rasterize(var_mask, extent, resampling)[window]
    labels = gt_mask[window]
    return prob.ravel(), labels.ravel(), var.ravel()


def build_report(
    dataset: Dataset,
    obs_file: ObservationsFile,
    eval_config: EvalConfig | None = None,
    extra_echo: dict | None = None,
) -> tuple[dict, SparsificationCurve | None, SparsificationCurve | None]:
    """Score observations against ground truth.

    Returns the report dict plus the semantic and spatial sparsification
    curves (None when undefined, e.g. fewer than two samples or zero total
    error — the corresponding report fields are null then).
    """
    cfg = eval_config or EvalConfig()
    pairs = _align_frames(dataset, obs_file)

    assignments = []
    sem_probs: list[np.ndarray] = []
    sem_classes: list[int] = []
    sem_conf: list[float] = []
    sem_correct: list[bool] = []
    sem_var: list[float] = []
    pix_probs: list[np.ndarray] = []
    pix_labels: list[np.ndarray] = []
    pix_var: list[np.ndarray] = []

    for frame, observations in pairs:
        assignment = evaluate_frame(
            frame.ground_truth,
            observations,
            epsilon=cfg.epsilon,
            resampling=cfg.resampling,
            validity_floor=cfg.validity_floor,
        )
        assignments.append(assignment)

        matched_obs = {j: i for i, j, _ in assignment.matches}
        union_mask = np.zeros(frame.image_extent, dtype=bool)
        for gt in frame.ground_truth:
            union_mask |= gt.mask

        for j, obs in enumerate(observations):
            if j in matched_obs:
                gt = frame.ground_truth[matched_obs[j]]
                sem_probs.append(obs.class_probs_mean)
                sem_classes.append(gt.class_id)
                sem_conf.append(obs.confidence)
                sem_correct.append(obs.class_id == gt.class_id)
                sem_var.append(
                    obs.uncertainty.semantic_epistemic + obs.uncertainty.semantic_aleatoric
                )
                label_mask = gt.mask
            else:
                label_mask = union_mask
            probs, labels, variances = _observation_pixel_rows(
                obs, label_mask, frame.image_extent, cfg.resampling
            )
            pix_probs.append(probs)
            pix_labels.append(labels)
            pix_var.append(variances)

    result = aggregate_pmq(assignments)

    per_class = {}
    for class_id, stats in result.per_class.items():
        name = dataset.classes[class_id] if class_id < len(dataset.classes) else "background"
        per_class[name] = {
            "pmq": stats.pmq,
            "mean_q_label": stats.mean_q_label,
            "mean_q_spatial": stats.mean_q_spatial,
            "tp": stats.n_tp,
            "fp": stats.n_fp,
            "fn": stats.n_fn,
        }

    sem_ece = sem_brier = sem_ause_val = None
    sem_curve = None
    if sem_conf:
        sem_ece = ece(np.array(sem_conf), np.array(sem_correct), cfg.n_bins)
        errors = brier_scores(np.stack(sem_probs), np.array(sem_classes))
        sem_brier = float(errors.mean())
        try:
            sem_curve = sparsification_curve(errors, np.array(sem_var), cfg.n_steps, cfg.f_max)
            sem_ause_val = sem_curve.ause
        except UndefinedMetricError:
            sem_curve = None

    spat_ece = spat_ause_val = None
    spat_curve = None
    if pix_probs:
        probs = np.concatenate(pix_probs)
        labels = np.concatenate(pix_labels)
        variances = np.concatenate(pix_var)
        if probs.size:
            confidence = np.maximum(probs, 1.0 - probs)
            correct = (probs > 0.5) == labels
            spat_ece = ece(confidence, correct, cfg.n_bins)
            try:
                spat_curve = sparsification_curve(
                    spatial_brier(probs, labels), variances, cfg.n_steps, cfg.f_max
                )
                spat_ause_val = spat_curve.ause
            except UndefinedMetricError:
                spat_curve = None

    echo = {"fuse": dict(obs_file.fuse_config), "eval": cfg.to_dict()}
    if extra_echo:
        echo.update(extra_echo)

    report = {
        "pmq": result.pmq,
        "mean_ppmq": result.mean_ppmq_over_tp,
        "per_class": per_class,
        "semantic": {"ece": sem_ece, "ause": sem_ause_val, "brier_mean": sem_brier},
        "spatial": {"ece": spat_ece, "ause": spat_ause_val},
        "counts": {
            "tp": result.n_tp,
            "fp": result.n_fp,
            "fn": result.n_fn,
            "frames": len(pairs),
        },
        "config_echo": echo,
    }
    return report, sem_curve, spat_curve
