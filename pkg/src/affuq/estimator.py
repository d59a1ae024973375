"""Scikit-learn style front door for the cluster-and-fuse pipeline."""
from __future__ import annotations

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .clustering import ClusteringConfig, cluster_frame
from .fusion import DENOMINATORS, Observation, fuse_cluster
from .types import Frame

__all__ = ["DetectionFuser"]


class DetectionFuser(TransformerMixin, BaseEstimator):
    """Fuse multi-pass detections into observations with uncertainty.

    A stateless transformer: ``fit`` only validates the parameters. ``X`` is
    a sequence of :class:`~affuq.types.Frame` objects; ``transform`` returns
    one list of :class:`~affuq.fusion.Observation` per frame, obtained by
    sequentially clustering the frame's pooled detections (mask IoU above
    ``iou_threshold`` against the cluster representative, argmax classes
    equal) and averaging each cluster.

    Parameters
    ----------
    iou_threshold : float, default=0.5
        Minimum mask IoU for a detection to join an existing cluster.
    bin_threshold : float, default=0.5
        Probability threshold binarizing heatmaps before IoU.
    ordering : {"by-confidence-desc", "by-input-order"}
        Order in which detections are swept into clusters.
    linkage : {"mean", "first"}
        Cluster representative: running mean of members, or founding member.
    denominator : {"k", "M"}
        Average over members present (k) or over all passes (M); see
        :func:`~affuq.fusion.fuse_cluster`.
    resampling : {"bilinear", "nearest"}
        Policy for placing bbox-local heatmaps into the image frame.
    """

    def __init__(
        self,
        iou_threshold: float = 0.5,
        bin_threshold: float = 0.5,
        ordering: str = "by-confidence-desc",
        linkage: str = "mean",
        denominator: str = "k",
        resampling: str = "bilinear",
    ):
        self.iou_threshold = iou_threshold
        self.bin_threshold = bin_threshold
        self.ordering = ordering
        self.linkage = linkage
        self.denominator = denominator
        self.resampling = resampling

    def _clustering_config(self) -> ClusteringConfig:
        return ClusteringConfig(
            iou_threshold=self.iou_threshold,
            bin_threshold=self.bin_threshold,
            ordering=self.ordering,
            linkage=self.linkage,
            resampling=self.resampling,
        )

    def fit(self, X=None, y=None):
        """Validate parameters; the transform itself keeps no state."""
        self._clustering_config()
        if self.denominator not in DENOMINATORS:
            raise ValueError(f"unknown denominator {self.denominator!r}, expected one of {DENOMINATORS}")
        self.fitted_ = True
        return self

    def transform(self, X) -> list[list[Observation]]:
        """Cluster and fuse every frame in ``X``."""
        check_is_fitted(self, "fitted_")
        cfg = self._clustering_config()
        out = []
        for frame in X:
            if not isinstance(frame, Frame):
                raise TypeError(f"expected Frame objects, got {type(frame).__name__}")
            clusters = cluster_frame(frame, cfg)
            out.append(
                [
                    fuse_cluster(
                        cluster,
                        frame.image_extent,
                        denominator=self.denominator,
                        n_passes=frame.n_passes,
                        resampling=self.resampling,
                    )
                    for cluster in clusters
                ]
            )
        return out

    def fuse_config(self) -> dict:
        """Echo of every knob that affects the fused numbers."""
        return {
            "iou_threshold": float(self.iou_threshold),
            "bin_threshold": float(self.bin_threshold),
            "ordering": self.ordering,
            "linkage": self.linkage,
            "denominator": self.denominator,
            "resampling": self.resampling,
        }
