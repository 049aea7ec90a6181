"""Synthetic partial-scan pair generator.

A pair is built from one procedural surface sampled inside the unit sphere:
two independent half-space crops keep a fraction p_v of the points, each crop
is moved by its own random rigid transform, jittered with per-coordinate
Gaussian noise, and subsampled to a fixed point count. The ground-truth
transform maps the source frame onto the target frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import NDArray

from overlapreg.geometry import (
    Points,
    RigidTransform,
    as_points,
    compose,
    overlap_ratio,
)

SHAPE_KINDS = ("blob", "sphere", "cube", "corner", "torus")


@dataclass(frozen=True)
class GenConfig:
    """Parameters of the pair generator.

    `n_keep` must not exceed floor(n_full * p_v), the crop size. The
    `pair_tolerance` is the distance used to measure the ground-truth overlap
    ratio of the finished pair. `normal_correlation` in [0, 1] pulls the two
    crop normals together; 0 keeps them independent.
    """

    kind: str = "blob"
    n_full: int = 2048
    p_v: float = 0.7
    n_keep: int = 717
    max_angle_deg: float = 45.0
    trans_range: float = 0.5
    jitter_sigma: float = 0.05
    pair_tolerance: float = 0.06
    normal_correlation: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in SHAPE_KINDS:
            raise ValueError(f"unknown shape kind: {self.kind!r}")
        if self.n_full < 1:
            raise ValueError("n_full must be positive")
        if not 0.0 < self.p_v <= 1.0:
            raise ValueError("p_v must lie in (0, 1]")
        n_crop = math.floor(self.n_full * self.p_v)
        if not 1 <= self.n_keep <= n_crop:
            raise ValueError(
                f"n_keep must lie in [1, floor(n_full * p_v)] = [1, {n_crop}]"
            )
        if not 0.0 <= self.max_angle_deg <= 180.0:
            raise ValueError("max_angle_deg must lie in [0, 180]")
        if self.trans_range < 0:
            raise ValueError("trans_range must be non-negative")
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be non-negative")
        if self.pair_tolerance <= 0:
            raise ValueError("pair_tolerance must be positive")
        if not 0.0 <= self.normal_correlation <= 1.0:
            raise ValueError("normal_correlation must lie in [0, 1]")


@dataclass(frozen=True)
class PairSample:
    """One generated registration problem.

    `source` and `target` are the cropped, transformed, jittered, subsampled
    clouds. `raw_source` and `raw_target` are the full n_full-point surface in
    each cloud's frame, without jitter; they serve the Chamfer-style metrics.
    `gt` maps source-frame points onto the target frame. `overlap` is the
    ground-truth overlap ratio of source against target at `pair_tolerance`.
    """

    source: Points
    target: Points
    gt: RigidTransform
    overlap: float
    raw_source: Points
    raw_target: Points
    seed: int


# ---------------------------------------------------------------------------
# procedural surfaces
# ---------------------------------------------------------------------------


def _rng(seed: int | np.random.Generator) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _unit_rows(rows: NDArray[np.float64]) -> NDArray[np.float64]:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    norms = np.where(norms == 0.0, 1.0, norms)
    return rows / norms


def _fit_unit_sphere(pts: NDArray[np.float64]) -> NDArray[np.float64]:
    r = np.linalg.norm(pts, axis=1).max()
    return pts / r if r > 0 else pts


def _sphere(n: int, rng: np.random.Generator) -> NDArray[np.float64]:
    return _unit_rows(rng.normal(size=(n, 3)))


def _blob(n: int, rng: np.random.Generator) -> NDArray[np.float64]:
    # sphere warped by a random low-order polynomial of the direction; breaks
    # every rotational symmetry so pose recovery from geometry is well posed
    d = _unit_rows(rng.normal(size=(n, 3)))
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    basis = np.stack(
        [x, y, z, x * y, y * z, x * z, x * x - y * y, 3 * z * z - 1, x * y * z],
        axis=1,
    )
    coeff = rng.uniform(-1.0, 1.0, size=basis.shape[1])
    bump = basis @ coeff
    bump = bump / max(np.abs(bump).max(), 1e-12)
    radius = 1.0 + 0.35 * bump
    return _fit_unit_sphere(d * radius[:, None])


def _cube(n: int, rng: np.random.Generator) -> NDArray[np.float64]:
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    for a in range(3):
        rows = axis == a
        others = [i for i in range(3) if i != a]
        pts[rows, a] = sign[rows]
        pts[rows, others[0]] = uv[rows, 0]
        pts[rows, others[1]] = uv[rows, 1]
    return _fit_unit_sphere(pts)


def _corner(n: int, rng: np.random.Generator) -> NDArray[np.float64]:
    # two unit half-planes meeting along the y axis
    n_a = (n + 1) // 2
    u = rng.uniform(0.0, 1.0, size=n)
    v = rng.uniform(-1.0, 1.0, size=n)
    pts = np.zeros((n, 3))
    pts[:n_a, 0] = u[:n_a]
    pts[:n_a, 1] = v[:n_a]
    pts[n_a:, 2] = u[n_a:]
    pts[n_a:, 1] = v[n_a:]
    return _fit_unit_sphere(pts)


def _torus(n: int, rng: np.random.Generator) -> NDArray[np.float64]:
    ring, tube = 1.0, 0.4
    out = np.empty((n, 3))
    done = 0
    while done < n:
        take = 2 * (n - done) + 16
        u = rng.uniform(0.0, 2 * np.pi, size=take)
        v = rng.uniform(0.0, 2 * np.pi, size=take)
        # area-weighted rejection keeps the sampling uniform on the surface
        keep = rng.uniform(0.0, 1.0, size=take) < (ring + tube * np.cos(v)) / (ring + tube)
        u, v = u[keep], v[keep]
        m = min(len(u), n - done)
        w = ring + tube * np.cos(v[:m])
        out[done : done + m, 0] = w * np.cos(u[:m])
        out[done : done + m, 1] = w * np.sin(u[:m])
        out[done : done + m, 2] = tube * np.sin(v[:m])
        done += m
    return _fit_unit_sphere(out)


_SHAPE_FNS = {
    "sphere": _sphere,
    "blob": _blob,
    "cube": _cube,
    "corner": _corner,
    "torus": _torus,
}


def sample_shape(kind: str, n: int, seed: int | np.random.Generator) -> Points:
    """Sample `n` points of a procedural surface scaled into the unit sphere."""
    if kind not in _SHAPE_FNS:
        raise ValueError(f"unknown shape kind: {kind!r}")
    if n < 1:
        raise ValueError("n must be positive")
    return as_points(_SHAPE_FNS[kind](n, _rng(seed)))


# ---------------------------------------------------------------------------
# crop / rigid / noise stages
# ---------------------------------------------------------------------------


def half_space_crop(
    points: Points,
    p_v: float,
    seed: int | np.random.Generator,
    normal: NDArray[np.float64] | None = None,
) -> Points:
    """Keep the floor(N * p_v) points furthest along a random plane normal.

    The plane passes through the origin and is shifted along its normal until
    exactly floor(N * p_v) points lie on the kept side. Input order is
    preserved among the kept points. A unit `normal` may be supplied to
    override the random draw.
    """
    pts = as_points(points)
    if not 0.0 < p_v <= 1.0:
        raise ValueError("p_v must lie in (0, 1]")
    n_keep = math.floor(len(pts) * p_v)
    if n_keep < 1:
        raise ValueError("crop keeps no points")
    if normal is None:
        normal = _unit_rows(_rng(seed).normal(size=(1, 3)))[0]
    proj = pts @ normal
    order = np.lexsort((np.arange(len(pts)), -proj))[:n_keep]
    return pts[np.sort(order)]


def random_rigid(
    max_angle_deg: float,
    trans_range: float,
    seed: int | np.random.Generator,
) -> RigidTransform:
    """Rotation about a uniform random axis by an angle below `max_angle_deg`,
    plus a translation with coordinates uniform in [-trans_range, trans_range].
    """
    if not 0.0 <= max_angle_deg <= 180.0:
        raise ValueError("max_angle_deg must lie in [0, 180]")
    if trans_range < 0:
        raise ValueError("trans_range must be non-negative")
    rng = _rng(seed)
    axis = _unit_rows(rng.normal(size=(1, 3)))[0]
    angle = math.radians(rng.uniform(0.0, max_angle_deg))
    t = rng.uniform(-trans_range, trans_range, size=3)
    k = np.array(
        [
            [0.0, -axis[2], axis[1]],
            [axis[2], 0.0, -axis[0]],
            [-axis[1], axis[0], 0.0],
        ]
    )
    rot = np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)
    return RigidTransform(rot, t)


def jitter(points: Points, sigma: float, seed: int | np.random.Generator) -> Points:
    """Add iid per-coordinate Gaussian noise with standard deviation `sigma`."""
    pts = as_points(points)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return pts.copy()
    return pts + _rng(seed).normal(0.0, sigma, size=pts.shape)


def subsample(points: Points, n_keep: int, seed: int | np.random.Generator) -> Points:
    """Keep a uniform random subset of `n_keep` points, input order preserved."""
    pts = as_points(points)
    if not 1 <= n_keep <= len(pts):
        raise ValueError(f"n_keep must lie in [1, {len(pts)}]")
    idx = _rng(seed).choice(len(pts), size=n_keep, replace=False)
    return pts[np.sort(idx)]


# ---------------------------------------------------------------------------
# pair assembly
# ---------------------------------------------------------------------------


def make_pair(cfg: GenConfig) -> PairSample:
    """Generate one registration pair; fully determined by `cfg` (incl. seed)."""
    streams = np.random.SeedSequence(cfg.seed).spawn(9)
    r_shape, r_crop_s, r_crop_t, r_rig_s, r_rig_t, r_jit_s, r_jit_t, r_sub_s, r_sub_t = (
        np.random.default_rng(s) for s in streams
    )

    shape = sample_shape(cfg.kind, cfg.n_full, r_shape)

    normal_s = _unit_rows(r_crop_s.normal(size=(1, 3)))[0]
    normal_t = _unit_rows(r_crop_t.normal(size=(1, 3)))[0]
    if cfg.normal_correlation > 0.0:
        mixed = cfg.normal_correlation * normal_s + (1.0 - cfg.normal_correlation) * normal_t
        norm = np.linalg.norm(mixed)
        if norm > 1e-12:
            normal_t = mixed / norm
        else:
            normal_t = normal_s
    crop_s = half_space_crop(shape, cfg.p_v, r_crop_s, normal=normal_s)
    crop_t = half_space_crop(shape, cfg.p_v, r_crop_t, normal=normal_t)

    rig_s = random_rigid(cfg.max_angle_deg, cfg.trans_range, r_rig_s)
    rig_t = random_rigid(cfg.max_angle_deg, cfg.trans_range, r_rig_t)

    source = subsample(jitter(rig_s.apply(crop_s), cfg.jitter_sigma, r_jit_s), cfg.n_keep, r_sub_s)
    target = subsample(jitter(rig_t.apply(crop_t), cfg.jitter_sigma, r_jit_t), cfg.n_keep, r_sub_t)

    gt = compose(rig_t, rig_s.inverse())
    return PairSample(
        source=source,
        target=target,
        gt=gt,
        overlap=overlap_ratio(source, target, gt, cfg.pair_tolerance),
        raw_source=rig_s.apply(shape),
        raw_target=rig_t.apply(shape),
        seed=cfg.seed,
    )


def make_dataset(
    base: GenConfig,
    count: int,
    seed: int,
    p_v_range: tuple[float, float] | None = None,
) -> list[PairSample]:
    """Generate `count` pairs with per-pair seeds derived from `seed`.

    When `p_v_range` is given each pair draws its own visibility fraction
    uniformly from the range.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(count):
        cfg = replace(base, seed=int(np.random.SeedSequence((seed, i)).generate_state(1)[0]))
        if p_v_range is not None:
            lo, hi = p_v_range
            cfg = replace(cfg, p_v=float(rng.uniform(lo, hi)))
        pairs.append(make_pair(cfg))
    return pairs
