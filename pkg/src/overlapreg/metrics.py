"""Registration evaluation metrics and their CSV/JSON emitters.

All inequalities are exactly as sharp as the defining formulas: inlier
counting and ECDF use strict <, feature-match recall uses strict >, recall
uses strict <.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree

from .geometry import Points, RigidTransform, as_points, overlap_ratio
from .matching import CorrespondenceSet


@dataclass(frozen=True)
class EvalThresholds:
    """tau1: inlier distance (m); tau2: inlier-ratio cut; rmse_thresh: RR cut (m)."""

    tau1: float = 0.10
    tau2: float = 0.05
    rmse_thresh: float = 0.2

    def __post_init__(self) -> None:
        if not (self.tau1 > 0 and self.tau2 > 0 and self.rmse_thresh > 0):
            raise ValueError("all thresholds must be positive")


def inlier_ratio(
    corr: CorrespondenceSet,
    p_points: Points,
    q_points: Points,
    t_gt: RigidTransform,
    tau1: float,
) -> float:
    """Fraction of putative pairs within tau1 after ground-truth alignment."""
    if tau1 <= 0:
        raise ValueError("tau1 must be positive")
    if len(corr) == 0:
        warnings.warn("empty correspondence set; inlier ratio defined as 0")
        return 0.0
    p = as_points(p_points)[corr.p_indices]
    q = as_points(q_points)[corr.q_indices]
    d = np.linalg.norm(t_gt.apply(p) - q, axis=1)
    return float(np.mean(d < tau1))


def feature_match_recall(inlier_ratios: Sequence[float], tau2: float) -> float:
    """Fraction of pairs whose inlier ratio strictly exceeds tau2."""
    ir = np.asarray(inlier_ratios, dtype=float)
    if ir.size == 0:
        return 0.0
    return float(np.mean(ir > tau2))


def gt_correspondence_set(
    p_points: Points, q_points: Points, t_gt: RigidTransform, radius: float
) -> CorrespondenceSet:
    """Ground-truth pairs: each source with its aligned NN strictly within radius."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    p = as_points(p_points)
    q = as_points(q_points)
    if len(p) == 0 or len(q) == 0:
        return CorrespondenceSet(pairs=np.empty((0, 2), dtype=np.int64))
    d, nn = cKDTree(q).query(t_gt.apply(p), k=1)
    keep = d < radius
    pairs = np.stack([np.flatnonzero(keep), nn[keep]], axis=1)
    return CorrespondenceSet(pairs=pairs)


def registration_rmse(
    t_est: RigidTransform,
    gt_corr: CorrespondenceSet,
    p_points: Points,
    q_points: Points,
) -> float:
    """Root mean square residual of the estimate over ground-truth pairs."""
    if len(gt_corr) == 0:
        raise ValueError("empty ground-truth correspondence set")
    p = as_points(p_points)[gt_corr.p_indices]
    q = as_points(q_points)[gt_corr.q_indices]
    sq = ((t_est.apply(p) - q) ** 2).sum(axis=1)
    return float(np.sqrt(sq.mean()))


def registration_recall(rmses: Sequence[float], rmse_thresh: float) -> float:
    """Fraction of pairs with RMSE strictly below the threshold."""
    arr = np.asarray(rmses, dtype=float)
    if arr.size == 0:
        return 0.0
    return float(np.mean(arr < rmse_thresh))


def rre_rte(t_est: RigidTransform, t_gt: RigidTransform) -> tuple[float, float]:
    """(relative rotation error in degrees, relative translation error in m)."""
    c = (np.trace(t_est.rotation.T @ t_gt.rotation) - 1.0) / 2.0
    rre = float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))
    rte = float(np.linalg.norm(t_est.translation - t_gt.translation))
    return rre, rte


def chamfer_modified(
    p_points: Points,
    q_points: Points,
    t_est: RigidTransform,
    p_raw: Points,
    q_raw: Points,
) -> float:
    """Two-sided squared Chamfer with raw-cloud references.

    First term: inputs P against raw Q. Second term: inputs Q against the
    transformed raw P (the minimum runs over transformed raw source points).
    """
    p = as_points(p_points)
    q = as_points(q_points)
    praw = as_points(p_raw)
    qraw = as_points(q_raw)
    if len(praw) == 0 or len(qraw) == 0:
        raise ValueError("raw clouds must be nonempty")
    if len(p) == 0 or len(q) == 0:
        raise ValueError("input clouds must be nonempty")
    d1, _ = cKDTree(qraw).query(t_est.apply(p), k=1)
    d2, _ = cKDTree(t_est.apply(praw)).query(q, k=1)
    return float((d1**2).mean() + (d2**2).mean())


def ecdf_curve(
    values: Sequence[float], grid: Sequence[float]
) -> NDArray[np.float64]:
    """Rows (x, |{v_i < x}| / n) over the given grid; strict counting."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("values must be nonempty")
    g = np.asarray(grid, dtype=float)
    counts = (v[None, :] < g[:, None]).mean(axis=1)
    return np.stack([g, counts], axis=1)


def overlap_after_filtering(
    p_points: Points,
    q_points: Points,
    t_gt: RigidTransform,
    o_p: NDArray[np.float64],
    o_q: NDArray[np.float64],
    tolerance: float,
    cutoff: float = 0.5,
) -> tuple[float, float]:
    """Overlap ratio of P against Q before and after dropping low-score points.

    Points with predicted overlap score < cutoff are discarded on both sides.
    If either filtered cloud is empty, the after-value is 0 (with a warning).
    """
    p = as_points(p_points)
    q = as_points(q_points)
    o_p = np.asarray(o_p, dtype=float)
    o_q = np.asarray(o_q, dtype=float)
    if o_p.shape != (len(p),) or o_q.shape != (len(q),):
        raise ValueError("score lengths must match cloud sizes")
    before = overlap_ratio(p, q, t_gt, tolerance)
    keep_p = o_p >= cutoff
    keep_q = o_q >= cutoff
    if not keep_p.any() or not keep_q.any():
        warnings.warn("overlap filtering left an empty cloud; after-overlap is 0")
        return before, 0.0
    after = overlap_ratio(p[keep_p], q[keep_q], t_gt, tolerance)
    return before, after


# ---------------------------------------------------------------------------
# result emission
# ---------------------------------------------------------------------------

METRICS_CSV_FIELDS = (
    "pair_id",
    "overlap",
    "n_samples",
    "inlier_ratio",
    "rmse",
    "rre",
    "rte",
    "chamfer",
    "success",
)


@dataclass(frozen=True)
class PairMetrics:
    """One evaluation row; `success` is the RMSE test against the RR cut."""

    pair_id: str
    overlap: float
    n_samples: int
    inlier_ratio: float
    rmse: float
    rre: float
    rte: float
    chamfer: float
    success: bool


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def write_metrics_csv(path: str, rows: Iterable[PairMetrics]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_CSV_FIELDS)
        for r in rows:
            writer.writerow(
                [
                    r.pair_id,
                    _fmt(r.overlap),
                    str(r.n_samples),
                    _fmt(r.inlier_ratio),
                    _fmt(r.rmse),
                    _fmt(r.rre),
                    _fmt(r.rte),
                    _fmt(r.chamfer),
                    "1" if r.success else "0",
                ]
            )


def write_ecdf_csv(path: str, curve: NDArray[np.float64]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "ecdf"])
        for x, y in np.asarray(curve, dtype=float):
            writer.writerow([_fmt(x), _fmt(y)])


def write_summary_json(path: str, summary: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(summary, sort_keys=True, separators=(", ", ": ")) + "\n")
