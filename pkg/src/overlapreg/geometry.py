"""Exact geometric primitives: rigid transforms, neighbourhoods, overlap labels.

Everything here is deterministic and float64. Nearest-neighbour queries are
backed by a k-d tree; ties are always broken by ascending target index so that
results do not depend on tree internals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree, distance

F64 = np.float64
Points = NDArray[np.float64]
"""(N, 3) float64 array of xyz coordinates."""

_ORTHO_TOL = 1e-9


def as_points(arr: object) -> Points:
    """Validate and convert an array-like to an (N, 3) float64 point array.

    Raises ValueError on wrong shape or non-finite entries. N = 0 is allowed;
    callers that need points check emptiness themselves.
    """
    pts = np.asarray(arr, dtype=F64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) point array, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("point array contains non-finite values")
    return pts


# ---------------------------------------------------------------------------
# rigid transforms
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Proper rigid motion x -> R @ x + t.

    The rotation must be orthonormal with determinant +1 within 1e-9;
    construction fails otherwise.
    """

    rotation: NDArray[np.float64]
    translation: NDArray[np.float64]

    def __post_init__(self) -> None:
        rot = np.asarray(self.rotation, dtype=F64)
        tra = np.asarray(self.translation, dtype=F64).reshape(-1)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be (3, 3), got {rot.shape}")
        if tra.shape != (3,):
            raise ValueError(f"translation must have 3 components, got {tra.shape}")
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(tra))):
            raise ValueError("transform contains non-finite values")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > _ORTHO_TOL:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(rot) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation determinant is not +1 within 1e-9")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tra)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: Points) -> Points:
        pts = as_points(points)
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        rot_inv = self.rotation.T
        return RigidTransform(rot_inv, -(rot_inv @ self.translation))

    def matrix(self) -> NDArray[np.float64]:
        """Row-major (3, 4) matrix [R | t]."""
        return np.hstack([self.rotation, self.translation[:, None]])

    def flat(self) -> list[float]:
        """The 12 entries of [R | t] in row-major order."""
        return [float(v) for v in self.matrix().reshape(-1)]

    @classmethod
    def from_flat(cls, values: object) -> "RigidTransform":
        vals = np.asarray(values, dtype=F64).reshape(-1)
        if vals.shape != (12,):
            raise ValueError(f"expected 12 values for a [R | t] matrix, got {vals.shape[0]}")
        mat = vals.reshape(3, 4)
        return cls(mat[:, :3], mat[:, 3])


def apply_transform(transform: RigidTransform, points: Points) -> Points:
    return transform.apply(points)


def compose(outer: RigidTransform, inner: RigidTransform) -> RigidTransform:
    """Composition outer . inner, i.e. x -> outer(inner(x))."""
    return RigidTransform(
        outer.rotation @ inner.rotation,
        outer.rotation @ inner.translation + outer.translation,
    )


# ---------------------------------------------------------------------------
# voxel downsampling
# ---------------------------------------------------------------------------


def _voxel_keys(points: Points, voxel: float) -> NDArray[np.int64]:
    return np.floor(points / voxel).astype(np.int64)


def voxel_downsample(
    points: Points,
    voxel: float,
    mode: str = "pick_one",
    seed: int | np.random.Generator | None = 0,
) -> Points:
    """Reduce a cloud to one point per occupied voxel of edge length `voxel`.

    mode "pick_one" keeps one member of each voxel, chosen uniformly under
    `seed`; output rows are ordered by ascending index of the chosen member.
    mode "centroid" emits voxel centroids ordered by each voxel's first
    occurrence in the input.
    """
    pts = as_points(points)
    if voxel <= 0:
        raise ValueError("voxel size must be positive")
    if len(pts) == 0:
        return pts.copy()
    keys = _voxel_keys(pts, voxel)
    _, group_ids, counts = np.unique(
        keys, axis=0, return_inverse=True, return_counts=True
    )
    if mode == "pick_one":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        # random score per point; the argmax within each voxel group is a
        # uniform pick among its members
        score = rng.random(len(pts))
        order = np.lexsort((score, group_ids))
        chosen = order[np.cumsum(counts) - 1]
        return pts[np.sort(chosen)]
    if mode == "centroid":
        sums = np.zeros((len(counts), 3))
        np.add.at(sums, group_ids, pts)
        centroids = sums / counts[:, None]
        first_seen = np.full(len(counts), len(pts), dtype=np.int64)
        np.minimum.at(first_seen, group_ids, np.arange(len(pts)))
        return centroids[np.argsort(first_seen, kind="stable")]
    raise ValueError(f"unknown downsample mode: {mode!r}")


# ---------------------------------------------------------------------------
# k nearest neighbours
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NeighborGraph:
    """k-nearest-neighbour result: per source row, ascending (distance, index)."""

    k: int
    indices: NDArray[np.int64]
    distances: NDArray[np.float64]


def _brute_row(
    point: NDArray[np.float64],
    targets: Points,
    k_eff: int,
    exclude_index: int | None,
) -> tuple[NDArray[np.int64], NDArray[np.float64]]:
    d_all = np.sqrt(((targets - point) ** 2).sum(axis=1))
    if exclude_index is not None:
        d_all[exclude_index] = np.inf
    order = np.lexsort((np.arange(len(targets)), d_all))[:k_eff]
    return order.astype(np.int64), d_all[order]


def knn(
    sources: Points,
    targets: Points,
    k: int,
    same_object: bool | None = None,
) -> NeighborGraph:
    """k nearest targets for each source point, ties broken by ascending index.

    When `same_object` is true (default: autodetected as `sources is targets`)
    each point's own index is excluded, except for a single-point target set
    where the point is returned as its own neighbour. k is clamped to the
    number of available candidates.
    """
    src = as_points(sources)
    tgt = as_points(targets)
    if k < 1:
        raise ValueError("k must be at least 1")
    m = len(tgt)
    if m == 0:
        raise ValueError("empty target set")
    if same_object is None:
        same_object = sources is targets
    n = len(src)
    if n == 0:
        return NeighborGraph(k=0, indices=np.zeros((0, 0), np.int64), distances=np.zeros((0, 0)))
    if same_object and m == 1:
        d = np.sqrt(((src - tgt[0]) ** 2).sum(axis=1))[:, None]
        return NeighborGraph(k=1, indices=np.zeros((n, 1), np.int64), distances=d)

    exclude = bool(same_object)
    avail = m - 1 if exclude else m
    k_eff = min(k, avail)
    kq = min(m, k_eff + int(exclude) + 1)
    tree = cKDTree(tgt)
    dist, idx = tree.query(src, k=kq)
    dist = dist.reshape(n, kq)
    idx = idx.reshape(n, kq)

    self_found = np.zeros(n, dtype=bool)
    if exclude:
        self_mask = idx == np.arange(n)[:, None]
        self_found = self_mask.any(axis=1)
        dist = np.where(self_mask, np.inf, dist)
        idx = np.where(self_mask, m, idx)

    # row-wise lexicographic sort by (distance, index): stable-sort by index,
    # then stable-sort by distance
    ord1 = np.argsort(idx, axis=1, kind="stable")
    d1 = np.take_along_axis(dist, ord1, axis=1)
    ord2 = np.argsort(d1, axis=1, kind="stable")
    order = np.take_along_axis(ord1, ord2, axis=1)
    d_sorted = np.take_along_axis(dist, order, axis=1)
    i_sorted = np.take_along_axis(idx, order, axis=1)

    out_d = d_sorted[:, :k_eff].copy()
    out_i = i_sorted[:, :k_eff].copy()

    if kq < m:
        # a row is ambiguous if candidates beyond the query window could tie
        # with its k-th kept distance
        n_real = kq - (self_found.astype(int) if exclude else 0)
        last_real = d_sorted[np.arange(n), np.asarray(n_real) - 1]
        ambiguous = out_d[:, k_eff - 1] >= last_real
        if exclude:
            ambiguous |= ~self_found
        for row in np.nonzero(ambiguous)[0]:
            out_i[row], out_d[row] = _brute_row(
                src[row], tgt, k_eff, row if exclude else None
            )
    elif exclude:
        # full window: only rows whose self entry never showed up need care
        for row in np.nonzero(~self_found)[0]:
            out_i[row], out_d[row] = _brute_row(src[row], tgt, k_eff, row)

    return NeighborGraph(k=k_eff, indices=out_i.astype(np.int64), distances=out_d)


# ---------------------------------------------------------------------------
# ground-truth overlap and correspondence labels
# ---------------------------------------------------------------------------


def overlap_ratio(
    source: Points, target: Points, transform: RigidTransform, tolerance: float
) -> float:
    """Fraction of source points whose aligned nearest target is within `tolerance`."""
    src = as_points(source)
    tgt = as_points(target)
    if len(src) == 0:
        raise ValueError("source cloud is empty")
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    if len(tgt) == 0:
        return 0.0
    aligned = transform.apply(src)
    d, _ = cKDTree(tgt).query(aligned, k=1)
    return float(np.mean(d <= tolerance))


def gt_overlap_labels(
    source: Points, target: Points, transform: RigidTransform, radius: float
) -> NDArray[np.bool_]:
    """Per-source binary labels: aligned nearest-target distance strictly below `radius`."""
    src = as_points(source)
    tgt = as_points(target)
    if radius <= 0:
        raise ValueError("radius must be positive")
    if len(tgt) == 0 or len(src) == 0:
        return np.zeros(len(src), dtype=bool)
    aligned = transform.apply(src)
    d, _ = cKDTree(tgt).query(aligned, k=1)
    return d < radius


@dataclass(frozen=True)
class CorrespondenceLabels:
    """Dense positive/negative pair masks between an aligned source and a target.

    positive[i, j] is true when ||T(p_i) - q_j|| <= r_positive, negative[i, j]
    when the distance exceeds r_safe; pairs in between belong to neither set.
    matchable[i] flags source points with at least one positive.
    """

    positive: NDArray[np.bool_]
    negative: NDArray[np.bool_]
    matchable: NDArray[np.bool_]


def gt_correspondences(
    source: Points,
    target: Points,
    transform: RigidTransform,
    r_positive: float,
    r_safe: float,
) -> CorrespondenceLabels:
    if r_positive <= 0 or r_safe <= 0:
        raise ValueError("radii must be positive")
    if r_safe < r_positive:
        raise ValueError("safe radius must not be below positive radius")
    src = as_points(source)
    tgt = as_points(target)
    aligned = transform.apply(src)
    d = distance.cdist(aligned, tgt)
    positive = d <= r_positive
    negative = d > r_safe
    return CorrespondenceLabels(
        positive=positive,
        negative=negative,
        matchable=positive.any(axis=1),
    )
