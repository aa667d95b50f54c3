"""Labeled 2-D point clouds shared by the simulator, mapping, and localization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .geometry import Pose2, transform_points

SEMANTIC_CLASSES = ("slot-line", "lane-marking", "arrow")
CLASS_INDEX = {name: i for i, name in enumerate(SEMANTIC_CLASSES)}


@dataclass
class SemanticPointCloud:
    """Points with a semantic class label per point.

    ``xy`` is an (N, 2) float array; ``labels`` is an (N,) array of indices
    into :data:`SEMANTIC_CLASSES`.  The frame (world or car) depends on
    context and is documented at each producer.
    """

    xy: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.xy = np.asarray(self.xy, dtype=float).reshape(-1, 2)
        self.labels = np.asarray(self.labels, dtype=np.uint8).reshape(-1)
        if self.xy.shape[0] != self.labels.shape[0]:
            raise ValueError("xy and labels must have the same length")
        if self.xy.size and not np.all(np.isfinite(self.xy)):
            raise ValueError("point coordinates must be finite")
        if self.labels.size and int(self.labels.max()) >= len(SEMANTIC_CLASSES):
            raise ValueError("unknown semantic class index")

    def __len__(self) -> int:
        return self.xy.shape[0]

    @staticmethod
    def empty() -> "SemanticPointCloud":
        return SemanticPointCloud(np.empty((0, 2)), np.empty((0,), dtype=np.uint8))

    def subset(self, mask: np.ndarray) -> "SemanticPointCloud":
        return SemanticPointCloud(self.xy[mask], self.labels[mask])

    def of_class(self, class_index: int) -> np.ndarray:
        return self.xy[self.labels == class_index]

    def transformed(self, pose: Pose2) -> "SemanticPointCloud":
        if len(self) == 0:
            return SemanticPointCloud.empty()
        return SemanticPointCloud(transform_points(pose, self.xy), self.labels.copy())

    def relabeled(self, class_index: int = 0) -> "SemanticPointCloud":
        """Collapse all labels to one class (label-blind processing)."""
        return SemanticPointCloud(self.xy.copy(), np.full(len(self), class_index, dtype=np.uint8))

    @staticmethod
    def concat(clouds: Iterable["SemanticPointCloud"]) -> "SemanticPointCloud":
        clouds = [c for c in clouds if len(c)]
        if not clouds:
            return SemanticPointCloud.empty()
        return SemanticPointCloud(
            np.vstack([c.xy for c in clouds]),
            np.concatenate([c.labels for c in clouds]),
        )
