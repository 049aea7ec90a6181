"""End-to-end inference: preprocess, score, sample, match, estimate."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import NDArray

from . import autodiff as ad
from .config import RansacConfig
from .geometry import Points, RigidTransform, voxel_downsample
from .matching import (
    CorrespondenceSet,
    RegistrationError,
    SamplerMode,
    mutual_nn_matches,
    ransac_register,
    sample_interest_points,
)
from .network import ModelConfig, ScoredCloud, build_pyramid, forward_pair, scored_cloud


@dataclass(frozen=True)
class RegistrationResult:
    """Estimated pose plus the evidence it was computed from.

    Correspondence indices refer to the clouds as passed in (after any
    preprocessing done by the caller).
    """

    transform: RigidTransform
    inlier_mask: NDArray[np.bool_]
    correspondences: CorrespondenceSet
    samples_p: NDArray[np.int64]
    samples_q: NDArray[np.int64]
    scored_p: ScoredCloud
    scored_q: ScoredCloud


def preprocess(points: Points, voxel: float, seed: int = 0) -> Points:
    """Seeded one-point-per-voxel downsampling at the model's voxel size."""
    return voxel_downsample(points, voxel, mode="pick_one", seed=seed)


def extract_pair(
    p_points: Points, q_points: Points, store: ad.ParamStore, cfg: ModelConfig
) -> tuple[ScoredCloud, ScoredCloud]:
    """Run the two-stream network and detach per-point outputs."""
    fw = forward_pair(build_pyramid(p_points, cfg), build_pyramid(q_points, cfg), store, cfg)
    return scored_cloud(p_points, fw.out_p), scored_cloud(q_points, fw.out_q)


def _clamped(mode: SamplerMode, n: int) -> SamplerMode:
    if mode.k > n:
        warnings.warn(f"k={mode.k} exceeds cloud size {n}; clamped to {n}")
        return replace(mode, k=n)
    return mode


def register_clouds(
    p_points: Points,
    q_points: Points,
    store: ad.ParamStore,
    model_cfg: ModelConfig,
    sampler: SamplerMode,
    ransac: RansacConfig | None = None,
) -> RegistrationResult:
    """Score both clouds, sample interest points, match, and fit a pose.

    The two clouds draw from distinct sampler streams (seed, seed + 1);
    RANSAC reuses the sampler seed. Raises RegistrationError when fewer
    than 3 reciprocal matches survive or no hypothesis gathers 3 inliers.
    """
    ransac = ransac if ransac is not None else RansacConfig()
    scored_p, scored_q = extract_pair(p_points, q_points, store, model_cfg)
    idx_p = sample_interest_points(scored_p, _clamped(sampler, len(p_points)))
    idx_q = sample_interest_points(
        scored_q, replace(_clamped(sampler, len(q_points)), seed=sampler.seed + 1)
    )
    local = mutual_nn_matches(scored_p.descriptors[idx_p], scored_q.descriptors[idx_q])
    corr = CorrespondenceSet(
        pairs=np.stack([idx_p[local.p_indices], idx_q[local.q_indices]], axis=1)
    )
    if len(corr) < 3:
        raise RegistrationError(
            f"registration failed: only {len(corr)} reciprocal matches (need 3)"
        )
    transform, mask = ransac_register(
        corr,
        p_points,
        q_points,
        iters=ransac.iters,
        inlier_thresh=ransac.inlier_thresh,
        seed=sampler.seed,
    )
    return RegistrationResult(
        transform=transform,
        inlier_mask=mask,
        correspondences=corr,
        samples_p=idx_p,
        samples_q=idx_q,
        scored_p=scored_p,
        scored_q=scored_q,
    )
