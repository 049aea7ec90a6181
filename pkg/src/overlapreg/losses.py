"""Metric, overlap, and matchability losses with the gating schedule.

The circle loss pulls descriptors of geometrically corresponding points
together and pushes non-corresponding ones apart, with self-paced weights
beta that are clamped at zero and excluded from the gradient. Overlap and
matchability heads are supervised with binary cross-entropy; the overlap
term is class-balanced, the matchability term is plain. Matchability labels
are recomputed on the fly from the current descriptors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import distance

from overlapreg import autodiff as ad
from overlapreg.geometry import CorrespondenceLabels, Points, RigidTransform

_EPS = 1e-12


@dataclass(frozen=True)
class LossConfig:
    """Margins, radii, and schedule of the training objective.

    Radii are in the same units as the point clouds (unit-sphere scale here).
    `weights` orders the terms (circle, overlap, matchability).
    """

    delta_p: float = 0.1
    delta_n: float = 1.4
    gamma: float = 64.0
    n_anchors: int = 384
    r_positive: float = 0.018
    r_safe: float = 0.06
    r_overlap: float = 0.04
    r_match: float = 0.04
    matchability_gate: float = 0.30
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        if not 0.0 < self.delta_p < self.delta_n:
            raise ValueError("need 0 < delta_p < delta_n")
        if min(self.r_positive, self.r_safe, self.r_overlap, self.r_match) <= 0:
            raise ValueError("radii must be positive")
        if self.r_safe < self.r_positive:
            raise ValueError("r_safe must not be below r_positive")
        if self.gamma <= 0 or self.n_anchors < 1:
            raise ValueError("gamma and n_anchors must be positive")
        if not 0.0 <= self.matchability_gate <= 1.0:
            raise ValueError("matchability_gate must lie in [0, 1]")
        if len(self.weights) != 3 or min(self.weights) < 0:
            raise ValueError("weights must be three non-negative numbers")


@dataclass(frozen=True)
class LossReport:
    """Scalar training diagnostics for one step or one epoch."""

    circle: float
    overlap: float
    matchability: float
    match_rate: float
    overlap_weight_fallback: bool = False


# ---------------------------------------------------------------------------
# circle loss
# ---------------------------------------------------------------------------


@dataclass
class CircleLossResult:
    loss: ad.Tensor
    anchors_p: NDArray[np.int64]
    anchors_q: NDArray[np.int64]


def sample_anchors(
    matchable: NDArray[np.bool_], n: int, rng: np.random.Generator
) -> NDArray[np.int64]:
    """Seeded uniform anchor sample (without replacement) from the matchable set."""
    candidates = np.nonzero(matchable)[0]
    if len(candidates) == 0:
        raise ValueError("no positive pairs")
    take = min(n, len(candidates))
    return np.sort(rng.choice(candidates, size=take, replace=False))


def _circle_one_side(
    f_anchor: ad.Tensor,
    f_other: ad.Tensor,
    pos_mask: NDArray[np.bool_],
    neg_mask: NDArray[np.bool_],
    anchors: NDArray[np.int64],
    cfg: LossConfig,
) -> ad.Tensor:
    pos = pos_mask[anchors].astype(float)
    neg = neg_mask[anchors].astype(float)
    d = ad.pairwise_dist(ad.gather_rows(f_anchor, anchors), f_other)
    # self-paced weights: clamped at zero, treated as constants (no gradient)
    beta_p = cfg.gamma * np.maximum(d.data - cfg.delta_p, 0.0) * pos
    beta_n = cfg.gamma * np.maximum(cfg.delta_n - d.data, 0.0) * neg
    pos_sum = ad.rowsum(ad.mul_const(ad.exp(ad.mul_const(ad.add_const(d, -cfg.delta_p), beta_p)), pos))
    neg_sum = ad.rowsum(ad.mul_const(ad.exp(ad.mul_const(ad.const_minus(cfg.delta_n, d), beta_n)), neg))
    return ad.mean(ad.log1p(ad.mul(pos_sum, neg_sum)))


def circle_loss(
    f_p: ad.Tensor,
    f_q: ad.Tensor,
    corr: CorrespondenceLabels,
    cfg: LossConfig,
    seed: int,
) -> CircleLossResult:
    """Symmetric circle loss over seeded anchor samples from both clouds.

    Anchors are drawn from the matchable points only; feature distances to
    the whole other cloud are compared against the geometric positive and
    negative sets. Raises "no positive pairs" when nothing is matchable.
    """
    rng = np.random.default_rng(seed)
    anchors_p = sample_anchors(corr.matchable, cfg.n_anchors, rng)
    anchors_q = sample_anchors(corr.positive.any(axis=0), cfg.n_anchors, rng)
    loss_p = _circle_one_side(f_p, f_q, corr.positive, corr.negative, anchors_p, cfg)
    loss_q = _circle_one_side(f_q, f_p, corr.positive.T, corr.negative.T, anchors_q, cfg)
    loss = ad.mul_const(ad.add(loss_p, loss_q), 0.5)
    return CircleLossResult(loss=loss, anchors_p=anchors_p, anchors_q=anchors_q)


def anchor_match_rate(
    desc_p: NDArray[np.float64],
    desc_q: NDArray[np.float64],
    anchors_p: NDArray[np.int64],
    anchors_q: NDArray[np.int64],
    p_aligned: Points,
    q_points: Points,
    r_match: float,
) -> float:
    """Fraction of anchors whose feature-space NN is geometrically correct.

    Measured symmetrically over both anchor sets with threshold `r_match`
    against the ground-truth-aligned coordinates.
    """
    d_pq = distance.cdist(desc_p[anchors_p], desc_q)
    nn_q = d_pq.argmin(axis=1)
    ok_p = np.linalg.norm(p_aligned[anchors_p] - q_points[nn_q], axis=1) < r_match
    d_qp = distance.cdist(desc_q[anchors_q], desc_p)
    nn_p = d_qp.argmin(axis=1)
    ok_q = np.linalg.norm(q_points[anchors_q] - p_aligned[nn_p], axis=1) < r_match
    return float(np.concatenate([ok_p, ok_q]).mean())


# ---------------------------------------------------------------------------
# binary cross-entropy heads
# ---------------------------------------------------------------------------


def _bce_elementwise(pred: ad.Tensor, labels: NDArray[np.float64]) -> ad.Tensor:
    p = ad.clip(pred, _EPS, 1.0 - _EPS)
    pos_part = ad.mul_const(ad.log(p), labels)
    neg_part = ad.mul_const(ad.log(ad.const_minus(1.0, p)), 1.0 - labels)
    return ad.const_minus(0.0, ad.add(pos_part, neg_part))


def overlap_loss(
    o: ad.Tensor, labels: NDArray[np.bool_]
) -> tuple[ad.Tensor, bool]:
    """Class-balanced BCE; falls back to unweighted when one class is empty.

    Returns (loss, fallback_flag). `o` is the (N, 1) sigmoid output column.
    """
    y = np.asarray(labels, dtype=float).reshape(-1, 1)
    if y.shape[0] != o.data.shape[0]:
        raise ValueError("label count does not match prediction count")
    n = y.shape[0]
    n_pos = float(y.sum())
    n_neg = n - n_pos
    fallback = n_pos == 0 or n_neg == 0
    if fallback:
        w = np.ones_like(y)
    else:
        w = np.where(y > 0, n / (2.0 * n_pos), n / (2.0 * n_neg))
    return ad.mean(ad.mul_const(_bce_elementwise(o, y), w)), fallback


def matchability_labels(
    desc_p: NDArray[np.float64],
    desc_q: NDArray[np.float64],
    p_points: Points,
    q_points: Points,
    gt: RigidTransform,
    r_match: float,
) -> NDArray[np.bool_]:
    """label_i = 1 iff p_i's feature-space NN in Q lies within r_match of gt(p_i)."""
    nn = distance.cdist(desc_p, desc_q).argmin(axis=1)
    return np.linalg.norm(gt.apply(p_points) - q_points[nn], axis=1) < r_match


def matchability_loss(m: ad.Tensor, labels: NDArray[np.bool_]) -> ad.Tensor:
    """Plain (unbalanced) BCE over the matchability column."""
    y = np.asarray(labels, dtype=float).reshape(-1, 1)
    if y.shape[0] != m.data.shape[0]:
        raise ValueError("label count does not match prediction count")
    return ad.mean(_bce_elementwise(m, y))


def total_loss(
    circle: ad.Tensor,
    overlap: ad.Tensor,
    matchability: ad.Tensor | None,
    cfg: LossConfig,
    include_matchability: bool,
) -> ad.Tensor:
    """Weighted sum of the loss terms; matchability enters only once gated on."""
    w_c, w_o, w_m = cfg.weights
    total = ad.add(ad.mul_const(circle, w_c), ad.mul_const(overlap, w_o))
    if include_matchability:
        if matchability is None:
            raise ValueError("matchability loss requested but not provided")
        total = ad.add(total, ad.mul_const(matchability, w_m))
    return total
