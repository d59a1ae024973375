"""Sequential clustering of pooled multi-pass detections.

Detections from all forward passes of one frame are pooled and grouped with
a basic sequential algorithmic scheme: walk the detections in a fixed order
and either assign each one to the best-matching existing cluster or open a
new cluster. "Best-matching" means highest mask IoU against the cluster
representative, subject to the IoU clearing a threshold and the argmax class
agreeing. One cluster corresponds to one physical object hypothesis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .masks import binarize, rasterize
from .types import Detection, Frame

__all__ = ["ClusteringConfig", "ObservationCluster", "cluster_bsas", "cluster_frame", "cluster_stats"]

ORDERINGS = ("by-confidence-desc", "by-input-order")
LINKAGES = ("mean", "first")


@dataclass
class ClusteringConfig:
    """Knobs of the sequential clustering pass.

    ordering
        ``"by-confidence-desc"`` visits detections by descending max class
        probability (ties keep input order); ``"by-input-order"`` keeps the
        pooled order (pass index, then within-pass order).
    linkage
        ``"mean"`` compares against the running mean heatmap of the cluster's
        members; ``"first"`` compares against the founding member only.
    """

    iou_threshold: float = 0.5
    bin_threshold: float = 0.5
    ordering: str = "by-confidence-desc"
    linkage: str = "mean"
    resampling: str = "bilinear"

    def __post_init__(self):
        if not 0.0 < self.iou_threshold < 1.0:
            raise ValueError(f"iou_threshold must lie in (0, 1), got {self.iou_threshold}")
        if not 0.0 < self.bin_threshold < 1.0:
            raise ValueError(f"bin_threshold must lie in (0, 1), got {self.bin_threshold}")
        if self.ordering not in ORDERINGS:
            raise ValueError(f"unknown ordering {self.ordering!r}, expected one of {ORDERINGS}")
        if self.linkage not in LINKAGES:
            raise ValueError(f"unknown linkage {self.linkage!r}, expected one of {LINKAGES}")


@dataclass
class ObservationCluster:
    """Group of detections believed to show the same object."""

    members: list[Detection]
    class_id: int  # shared argmax class of every member

    def __post_init__(self):
        if not self.members:
            raise ValueError("a cluster must contain at least one detection")
        self.class_id = int(self.class_id)
        for d in self.members:
            if d.argmax_class != self.class_id:
                raise ValueError(
                    f"cluster is labelled class {self.class_id} but contains a "
                    f"detection with argmax class {d.argmax_class}"
                )

    @property
    def k(self) -> int:
        return len(self.members)


def _visit_order(detections: list[Detection], ordering: str) -> np.ndarray:
    if ordering == "by-input-order":
        return np.arange(len(detections))
    conf = np.array([d.confidence for d in detections])
    return np.argsort(-conf, kind="stable")


def cluster_bsas(
    detections: list[Detection],
    extent: tuple[int, int],
    config: ClusteringConfig | None = None,
) -> list[ObservationCluster]:
    """Group pooled detections into clusters, one sequential sweep.

    Clusters are returned in creation order. The result is a partition of the
    input: every detection lands in exactly one cluster. A cluster may hold
    several detections from the same pass; nothing forbids that.
    """
    cfg = config or ClusteringConfig()
    clusters: list[list[int]] = []  # member indices into `detections`
    cls_ids: list[int] = []
    reps: list[np.ndarray] = []  # representative heatmap, full extent
    rasters: dict[int, np.ndarray] = {}

    for idx in _visit_order(detections, cfg.ordering):
        det = detections[int(idx)]
        heat = rasterize(det.mask, extent, cfg.resampling)
        rasters[int(idx)] = heat
        fg = binarize(heat, cfg.bin_threshold)
        best, best_iou = -1, cfg.iou_threshold
        for ci, rep in enumerate(reps):
            if cls_ids[ci] != det.argmax_class:
                continue
            rep_fg = binarize(rep, cfg.bin_threshold)
            union = np.logical_or(fg, rep_fg).sum()
            iou = float(np.logical_and(fg, rep_fg).sum() / union) if union else 0.0
            if iou > best_iou:
                best, best_iou = ci, iou
        if best < 0:
            clusters.append([int(idx)])
            cls_ids.append(det.argmax_class)
            reps.append(heat.copy())
        else:
            members = clusters[best]
            members.append(int(idx))
            if cfg.linkage == "mean":
                reps[best] += (heat - reps[best]) / len(members)

    return [
        ObservationCluster(members=[detections[i] for i in idxs], class_id=cls_ids[ci])
        for ci, idxs in enumerate(clusters)
    ]


def cluster_frame(frame: Frame, config: ClusteringConfig | None = None) -> list[ObservationCluster]:
    """Pool the frame's passes and cluster them."""
    return cluster_bsas(frame.pooled_detections(), frame.image_extent, config)


def cluster_stats(cluster: ObservationCluster, n_passes: int) -> dict:
    """Support statistics of one cluster against the number of passes M.

    Returns ``{"k": members, "support_ratio": k / M}``. ``k > M`` is possible
    only when a pass contributed twice; it is still capped by pooling size,
    but a ratio above 1 usually signals an upstream inconsistency, so it is
    rejected here.
    """
    if n_passes < 1:
        raise ValueError(f"n_passes must be >= 1, got {n_passes}")
    if cluster.k > n_passes:
        raise ValueError(
            f"cluster has {cluster.k} members but only {n_passes} passes were run"
        )
    return {"k": cluster.k, "support_ratio": cluster.k / n_passes}
