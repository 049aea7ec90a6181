"""Low-overlap rigid point-cloud registration at desk scale.

The package trains a small overlap-attention feature network on synthetic
partial scans, samples interest points by predicted overlap and matchability,
and estimates the rigid motion with RANSAC over mutual nearest-neighbour
feature matches followed by a Kabsch refit.
"""

from overlapreg.geometry import (
    NeighborGraph,
    RigidTransform,
    apply_transform,
    as_points,
    compose,
    gt_correspondences,
    gt_overlap_labels,
    knn,
    overlap_ratio,
    voxel_downsample,
)
from overlapreg.synth import GenConfig, PairSample, make_pair

__all__ = [
    "NeighborGraph",
    "RigidTransform",
    "apply_transform",
    "as_points",
    "compose",
    "gt_correspondences",
    "gt_overlap_labels",
    "knn",
    "overlap_ratio",
    "voxel_downsample",
    "GenConfig",
    "PairSample",
    "make_pair",
]
