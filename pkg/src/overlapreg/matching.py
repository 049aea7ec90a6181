"""Interest-point sampling, reciprocal matching, and robust pose estimation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import distance

from .geometry import Points, RigidTransform, as_points
from .network import ScoredCloud

SAMPLER_MODES = ("rand", "top_k_om", "prob_om")


class RegistrationError(ValueError):
    """Robust estimation could not produce a valid transform."""

# default iteration budget and metric threshold (2.5x the default voxel size)
RANSAC_ITERS = 50_000
RANSAC_INLIER_THRESH = 0.15


@dataclass(frozen=True)
class CorrespondenceSet:
    """Putative index pairs between two clouds, optionally weighted."""

    pairs: NDArray[np.int64]
    weights: NDArray[np.float64] | None = None

    def __post_init__(self) -> None:
        pairs = np.asarray(self.pairs, dtype=np.int64)
        if pairs.ndim != 2 or pairs.shape[1] != 2:
            raise ValueError("pairs must have shape (m, 2)")
        if len(pairs) and pairs.min() < 0:
            raise ValueError("pair indices must be non-negative")
        object.__setattr__(self, "pairs", pairs)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.shape != (len(pairs),):
                raise ValueError("weights must be one per pair")
            if (w < 0).any() or not w.sum() > 0:
                raise ValueError("weights must be non-negative with positive sum")
            object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def p_indices(self) -> NDArray[np.int64]:
        return self.pairs[:, 0]

    @property
    def q_indices(self) -> NDArray[np.int64]:
        return self.pairs[:, 1]


@dataclass(frozen=True)
class SamplerMode:
    """Interest-point sampling policy: `rand`, `top_k_om`, or `prob_om`."""

    mode: str
    k: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in SAMPLER_MODES:
            raise ValueError(f"mode must be one of {SAMPLER_MODES}")
        if self.k < 1:
            raise ValueError("k must be at least 1")


def sample_interest_points(cloud: ScoredCloud, mode: SamplerMode) -> NDArray[np.int64]:
    """Choose `mode.k` indices, optionally biased by the o*m score product.

    `rand` draws uniformly without replacement. `top_k_om` takes the k largest
    o_i * m_i with lower index winning ties. `prob_om` draws sequentially
    without replacement with probability proportional to the remaining
    scores; if every score is zero it falls back to uniform with a warning.
    """
    n = len(cloud.points)
    if mode.k > n:
        raise ValueError(f"k={mode.k} exceeds available points ({n})")
    rng = np.random.default_rng(mode.seed)
    if mode.mode == "rand":
        return np.asarray(rng.choice(n, size=mode.k, replace=False), dtype=np.int64)
    scores = cloud.overlap * cloud.matchability
    if mode.mode == "top_k_om":
        order = np.argsort(-scores, kind="stable")
        return np.asarray(order[: mode.k], dtype=np.int64)
    if not scores.sum() > 0:
        warnings.warn("all o*m scores are zero; falling back to uniform sampling")
        return np.asarray(rng.choice(n, size=mode.k, replace=False), dtype=np.int64)
    remaining = np.arange(n)
    w = scores.astype(np.float64).copy()
    picked = np.empty(mode.k, dtype=np.int64)
    for step in range(mode.k):
        total = w.sum()
        if total > 0:
            probs = w / total
        else:
            # score mass exhausted before k draws; finish uniformly
            probs = np.full(len(remaining), 1.0 / len(remaining))
        j = rng.choice(len(remaining), p=probs)
        picked[step] = remaining[j]
        remaining = np.delete(remaining, j)
        w = np.delete(w, j)
    return picked


def mutual_nn_matches(
    f_p: NDArray[np.float64], f_q: NDArray[np.float64]
) -> CorrespondenceSet:
    """Reciprocal nearest neighbours in feature space; ties go to lower index."""
    f_p = np.asarray(f_p, dtype=np.float64)
    f_q = np.asarray(f_q, dtype=np.float64)
    if len(f_p) == 0 or len(f_q) == 0:
        raise ValueError("both feature sets must be nonempty")
    d = distance.cdist(f_p, f_q)
    nn_q = d.argmin(axis=1)
    nn_p = d.argmin(axis=0)
    src = np.arange(len(f_p))
    keep = nn_p[nn_q] == src
    pairs = np.stack([src[keep], nn_q[keep]], axis=1)
    return CorrespondenceSet(pairs=pairs)


def kabsch(
    p_sel: Points, q_sel: Points, weights: NDArray[np.float64] | None = None
) -> RigidTransform:
    """Weighted least-squares rigid alignment of p onto q.

    Solves argmin_T sum_i w_i ||R p_i + t - q_i||^2 by SVD of the weighted
    cross-covariance, with the usual determinant correction so the result is
    a proper rotation.
    """
    p = as_points(p_sel)
    q = as_points(q_sel)
    if p.shape != q.shape:
        raise ValueError("point sets must have matching shapes")
    if len(p) < 3:
        raise ValueError("at least 3 correspondences required")
    if weights is None:
        w = np.full(len(p), 1.0 / len(p))
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (len(p),):
            raise ValueError("weights must be one per correspondence")
        if (w < 0).any() or not w.sum() > 0:
            raise ValueError("weights must be non-negative with positive sum")
        w = w / w.sum()
    mu_p = w @ p
    mu_q = w @ q
    x = p - mu_p
    y = q - mu_q
    cov = (x * w[:, None]).T @ y
    u, s, vt = np.linalg.svd(cov)
    if not s[0] > 0 or s[1] / s[0] < 1e-9:
        raise ValueError("degenerate correspondence geometry")
    sign = np.sign(np.linalg.det(vt.T @ u.T))
    rotation = vt.T @ np.diag([1.0, 1.0, sign]) @ u.T
    return RigidTransform(rotation=rotation, translation=mu_q - rotation @ mu_p)


def _hypothesis_poses(
    p_tri: NDArray[np.float64], q_tri: NDArray[np.float64]
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.bool_]]:
    """Batched unweighted Kabsch on minimal 3-point samples.

    Returns rotations (m,3,3), translations (m,3) and a validity mask that is
    false where the sample is (near-)collinear.
    """
    mu_p = p_tri.mean(axis=1, keepdims=True)
    mu_q = q_tri.mean(axis=1, keepdims=True)
    x = p_tri - mu_p
    y = q_tri - mu_q
    cov = np.einsum("mij,mik->mjk", x, y)
    u, s, vt = np.linalg.svd(cov)
    valid = (s[:, 0] > 0) & (s[:, 1] > 1e-9 * np.maximum(s[:, 0], 1e-300))
    det = np.linalg.det(np.einsum("mij,mkj->mik", vt.transpose(0, 2, 1), u))
    corr = np.repeat(np.eye(3)[None], len(p_tri), axis=0)
    corr[:, 2, 2] = np.sign(det)
    rot = np.einsum("mji,mjk,mlk->mil", vt, corr, u)
    trans = mu_q[:, 0] - np.einsum("mij,mj->mi", rot, mu_p[:, 0])
    return rot, trans, valid


def ransac_register(
    corr: CorrespondenceSet,
    p_points: Points,
    q_points: Points,
    iters: int = RANSAC_ITERS,
    inlier_thresh: float = RANSAC_INLIER_THRESH,
    seed: int = 0,
) -> tuple[RigidTransform, NDArray[np.bool_]]:
    """Seeded 3-point RANSAC over putative correspondences.

    Each iteration draws its minimal sample from an independent stream keyed
    by (seed, iteration), so runs are reproducible and iteration order is
    immaterial. The best hypothesis (most inliers, then lower RMSE, then
    earlier iteration) is refined by one unweighted Kabsch fit on its inlier
    set; the returned mask is the raw hypothesis's inlier set.
    """
    p = as_points(p_points)
    q = as_points(q_points)
    if len(corr) < 3:
        raise ValueError("at least 3 correspondences required")
    if iters < 1:
        raise ValueError("iters must be positive")
    if inlier_thresh <= 0:
        raise ValueError("inlier_thresh must be positive")
    p_sel = p[corr.p_indices]
    q_sel = q[corr.q_indices]
    m = len(corr)

    triples = np.empty((iters, 3), dtype=np.int64)
    for it in range(iters):
        rng = np.random.default_rng(np.random.SeedSequence((seed, it)))
        triples[it] = rng.choice(m, size=3, replace=False)

    best_count = -1
    best_rmse = np.inf
    best_pose: tuple[NDArray[np.float64], NDArray[np.float64]] | None = None
    best_mask: NDArray[np.bool_] | None = None
    chunk = 2048
    for start in range(0, iters, chunk):
        tri = triples[start : start + chunk]
        rot, trans, valid = _hypothesis_poses(p_sel[tri], q_sel[tri])
        moved = np.einsum("mij,nj->mni", rot, p_sel) + trans[:, None, :]
        dist2 = ((moved - q_sel[None]) ** 2).sum(axis=2)
        inl = dist2 < inlier_thresh**2
        inl[~valid] = False
        counts = inl.sum(axis=1)
        for j in np.flatnonzero(counts >= max(best_count, 3)):
            count = int(counts[j])
            rmse = float(np.sqrt(dist2[j][inl[j]].mean()))
            if count > best_count or (count == best_count and rmse < best_rmse):
                best_count = count
                best_rmse = rmse
                best_pose = (rot[j], trans[j])
                best_mask = inl[j]
    if best_pose is None:
        raise RegistrationError("registration failed")
    raw = RigidTransform(rotation=best_pose[0], translation=best_pose[1])
    assert best_mask is not None
    if best_mask.sum() >= 3:
        try:
            refined = kabsch(p_sel[best_mask], q_sel[best_mask])
        except ValueError:
            refined = raw
    else:
        refined = raw
    return refined, best_mask
