"""Uncertainty-aware fusion and evaluation of multi-pass instance detections.

Pipeline in one paragraph: a detector/simulator produces several stochastic
forward passes per frame; pooled detections are grouped by sequential
mask-IoU clustering; each cluster is averaged into an Observation carrying an
epistemic/aleatoric uncertainty split (semantic covariance traces and
per-pixel maps); observations are scored against ground truth with the
probability-based mask quality (PMQ) and calibration metrics (ECE, Brier,
sparsification/AUSE).
"""
from .calibration import (
    CalibSample,
    SparsificationCurve,
    ause,
    brier_score,
    brier_scores,
    ece,
    semantic_ause,
    sparsification_curve,
    spatial_ause,
    spatial_brier,
)
from .clustering import ClusteringConfig, ObservationCluster, cluster_bsas, cluster_frame, cluster_stats
from .estimator import DetectionFuser
from .exceptions import (
    AffuqError,
    ConfigError,
    DatasetFormatError,
    FrameAlignmentError,
    InfeasibleConfigError,
    UndefinedMetricError,
)
from .fusion import (
    Observation,
    UncertaintyMaps,
    aleatoric_cov,
    epistemic_cov,
    fuse_cluster,
    semantic_uncertainty,
    spatial_uncertainty,
    total_cov,
)
from .io import (
    Dataset,
    ObservationsFile,
    ObservationsFrame,
    load_dataset,
    load_observations,
    rle_decode,
    rle_encode,
    save_dataset,
    save_observations,
    save_report,
)
from .masks import binarize, clamp_prob, mask_iou, rasterize, resample_grid
from .pmq import (
    FrameAssignment,
    PairQuality,
    PMQResult,
    aggregate_pmq,
    assign_hungarian,
    bg_loss,
    evaluate_frame,
    fg_loss,
    pairwise_pmq,
    q_label,
    q_spatial,
)
from .report import EvalConfig, build_report
from .simulate import (
    NoiseConfig,
    SamplingMask,
    SimConfig,
    gen_dropout_masks,
    gen_masksembles,
    make_frames,
    make_scene,
    simulate_passes,
)
from .types import BBox, Detection, Frame, GroundTruthInstance, ProbMask, check_class_probs, check_sample_matrix

__version__ = "0.1.0"

__all__ = [
    "AffuqError",
    "BBox",
    "CalibSample",
    "ClusteringConfig",
    "ConfigError",
    "Dataset",
    "DatasetFormatError",
    "Detection",
    "DetectionFuser",
    "EvalConfig",
    "Frame",
    "FrameAlignmentError",
    "FrameAssignment",
    "GroundTruthInstance",
    "InfeasibleConfigError",
    "NoiseConfig",
    "Observation",
    "ObservationCluster",
    "ObservationsFile",
    "ObservationsFrame",
    "PairQuality",
    "PMQResult",
    "ProbMask",
    "SamplingMask",
    "SimConfig",
    "SparsificationCurve",
    "UncertaintyMaps",
    "UndefinedMetricError",
    "aggregate_pmq",
    "aleatoric_cov",
    "assign_hungarian",
    "ause",
    "bg_loss",
    "binarize",
    "brier_score",
    "brier_scores",
    "build_report",
    "check_class_probs",
    "check_sample_matrix",
    "clamp_prob",
    "cluster_bsas",
    "cluster_frame",
    "cluster_stats",
    "ece",
    "epistemic_cov",
    "evaluate_frame",
    "fg_loss",
    "fuse_cluster",
    "gen_dropout_masks",
    "gen_masksembles",
    "load_dataset",
    "load_observations",
    "make_frames",
    "make_scene",
    "mask_iou",
    "pairwise_pmq",
    "q_label",
    "q_spatial",
    "rasterize",
    "resample_grid",
    "rle_decode",
    "rle_encode",
    "save_dataset",
    "save_observations",
    "save_report",
    "semantic_ause",
    "semantic_uncertainty",
    "simulate_passes",
    "sparsification_curve",
    "spatial_ause",
    "spatial_brier",
    "spatial_uncertainty",
    "total_cov",
]
