"""Encoder/decoder network around the overlap-attention bottleneck.

The encoder builds a geometric pyramid (voxel sizes V, 2V, 4V, ...) and runs
two residual edge-conv blocks per level, max-pooling features to the next
level over each coarse point's children. The decoder walks back up with
nearest-parent upsampling and skip connections, ending in a descriptor head
and two score heads. Pyramid geometry (graphs, parents, pooling segments) is
separated from the forward pass so it can be computed once per cloud and
reused across training epochs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from overlapreg import autodiff as ad
from overlapreg.attention import (
    BottleneckState,
    cross_attention,
    cross_overlap,
    edge_conv,
    gnn_block,
    h_theta,
    init_cross_attention,
    init_gnn_block,
    init_h_theta,
    overlap_scores,
)
from overlapreg.geometry import NeighborGraph, Points, as_points, knn, voxel_downsample


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyper-parameters.

    `widths` gives the per-level encoder feature widths, finest first; the
    last entry is the bottleneck width and must be divisible by `heads`.
    """

    voxel: float = 0.06
    levels: int = 3
    widths: tuple[int, ...] = (64, 128, 256)
    final_dim: int = 32
    k_graph: int = 10
    heads: int = 4
    temperature: float = 0.02
    leaky_slope: float = 0.1

    def __post_init__(self) -> None:
        if self.voxel <= 0:
            raise ValueError("voxel must be positive")
        if self.levels < 2:
            raise ValueError("need at least two pyramid levels")
        if len(self.widths) != self.levels:
            raise ValueError("widths must have one entry per level")
        if self.widths[-1] % self.heads != 0:
            raise ValueError("bottleneck width must be divisible by heads")
        if self.final_dim < 1 or self.k_graph < 1:
            raise ValueError("final_dim and k_graph must be positive")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    @property
    def bottleneck(self) -> int:
        return self.widths[-1]


@dataclass
class PyramidLevel:
    """Geometry and features of one resolution level.

    `parent_index` maps each point to its nearest point in the next-coarser
    level (None at the coarsest). `pool_order`/`pool_starts` describe the
    children segments of the next-coarser level: order lists fine row indices
    grouped by coarse point, starts marks segment boundaries. Every coarse
    point has at least one child entry (childless ones fall back to their
    nearest fine point).
    """

    points: Points
    graph: NeighborGraph
    parent_index: NDArray[np.int64] | None = None
    pool_order: NDArray[np.int64] | None = None
    pool_starts: NDArray[np.int64] | None = None
    features: ad.Tensor | None = None


def build_pyramid(points: Points, cfg: ModelConfig) -> list[PyramidLevel]:
    """Deterministic geometric pyramid: level l is a centroid downsample at 2^l * V."""
    pts = as_points(points)
    level_points = [pts]
    for l in range(1, cfg.levels):
        level_points.append(voxel_downsample(pts, (2**l) * cfg.voxel, mode="centroid"))
    for lp in level_points:
        if len(lp) < cfg.k_graph:
            raise ValueError("insufficient points for pyramid")
    levels = []
    for l, lp in enumerate(level_points):
        graph = knn(lp, lp, cfg.k_graph, same_object=True)
        levels.append(PyramidLevel(points=lp, graph=graph))
    for l in range(cfg.levels - 1):
        fine, coarse = level_points[l], level_points[l + 1]
        parent = knn(fine, coarse, 1, same_object=False).indices[:, 0]
        levels[l].parent_index = parent
        counts = np.bincount(parent, minlength=len(coarse))
        empties = np.nonzero(counts == 0)[0]
        if len(empties):
            fallback = knn(coarse[empties], fine, 1, same_object=False).indices[:, 0]
            parent_ext = np.concatenate([parent, empties])
            entry_ext = np.concatenate([np.arange(len(fine), dtype=np.int64), fallback])
            order = entry_ext[np.argsort(parent_ext, kind="stable")]
            counts = np.bincount(parent_ext, minlength=len(coarse))
        else:
            order = np.argsort(parent, kind="stable").astype(np.int64)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
        levels[l].pool_order = order
        levels[l].pool_starts = starts
    return levels


def init_params(cfg: ModelConfig, seed: int = 0) -> ad.ParamStore:
    """Create all network parameters in a fixed, name-stable order."""
    store = ad.ParamStore(seed=seed)
    in_width = 3
    for l, w in enumerate(cfg.widths):
        init_h_theta(store, f"enc.l{l}.a", 2 * in_width, w)
        init_h_theta(store, f"enc.l{l}.b", 2 * w, w)
        in_width = w
    b = cfg.bottleneck
    init_gnn_block(store, "bn.gnn1", b)
    init_cross_attention(store, "bn.cross", b)
    init_gnn_block(store, "bn.gnn2", b)
    store.add_linear("bn.overlap", b, 1)
    up_in = b + 2
    for l in range(cfg.levels - 2, -1, -1):
        w = cfg.widths[l]
        init_h_theta(store, f"dec.l{l}", up_in + w, w)
        up_in = w
    store.add_linear("head.desc", cfg.widths[0], cfg.final_dim)
    store.add_linear("head.overlap", cfg.widths[0], 1)
    store.add_linear("head.match", cfg.widths[0], 1)
    return store


def encode(
    pyramid: list[PyramidLevel], store: ad.ParamStore, cfg: ModelConfig
) -> list[PyramidLevel]:
    """Run the encoder over a prebuilt pyramid, filling per-level features."""
    x = ad.constant(pyramid[0].points)
    for l, level in enumerate(pyramid):
        h1 = edge_conv(x, level.graph, store, f"enc.l{l}.a", cfg.leaky_slope)
        h2 = edge_conv(h1, level.graph, store, f"enc.l{l}.b", cfg.leaky_slope)
        level.features = ad.add(h1, h2)
        if l + 1 < len(pyramid):
            x = ad.segment_max(level.features, level.pool_order, level.pool_starts)
    return pyramid


@dataclass
class DecodeOut:
    """Dense per-point outputs at level-0 resolution (autodiff tensors)."""

    descriptors: ad.Tensor
    overlap: ad.Tensor
    matchability: ad.Tensor


def decode(
    pyramid: list[PyramidLevel],
    conditioned: ad.Tensor,
    overlap: ad.Tensor,
    cross: ad.Tensor,
    store: ad.ParamStore,
    cfg: ModelConfig,
) -> DecodeOut:
    """Nearest-parent upsampling with skip connections, then the three heads."""
    n_coarse = len(pyramid[-1].points)
    if conditioned.data.shape[0] != n_coarse:
        raise ValueError(
            f"conditioned features have {conditioned.data.shape[0]} rows, "
            f"coarsest level has {n_coarse} points"
        )
    x = ad.concat_cols([conditioned, overlap, cross])
    for l in range(len(pyramid) - 2, -1, -1):
        x = ad.gather_rows(x, pyramid[l].parent_index)
        x = ad.concat_cols([x, pyramid[l].features])
        x = h_theta(x, store, f"dec.l{l}", cfg.leaky_slope)
    desc = ad.l2_normalize_rows(ad.linear(x, store["head.desc.weight"], store["head.desc.bias"]))
    over = ad.sigmoid(ad.linear(x, store["head.overlap.weight"], store["head.overlap.bias"]))
    match = ad.sigmoid(ad.linear(x, store["head.match.weight"], store["head.match.bias"]))
    return DecodeOut(descriptors=desc, overlap=over, matchability=match)


def bottleneck_forward(
    pyramid_p: list[PyramidLevel],
    pyramid_q: list[PyramidLevel],
    store: ad.ParamStore,
    cfg: ModelConfig,
) -> tuple[BottleneckState, BottleneckState]:
    """GNN, bidirectional cross-attention, second GNN, overlap and cross scores."""
    slope = cfg.leaky_slope
    top_p, top_q = pyramid_p[-1], pyramid_q[-1]
    gp = gnn_block(top_p.features, top_p.graph, store, "bn.gnn1", slope)
    gq = gnn_block(top_q.features, top_q.graph, store, "bn.gnn1", slope)
    cp = cross_attention(gp, gq, store, "bn.cross", cfg.heads)
    cq = cross_attention(gq, gp, store, "bn.cross", cfg.heads)
    fp = gnn_block(cp, top_p.graph, store, "bn.gnn2", slope)
    fq = gnn_block(cq, top_q.graph, store, "bn.gnn2", slope)
    op = overlap_scores(fp, store, "bn.overlap")
    oq = overlap_scores(fq, store, "bn.overlap")
    state_p = BottleneckState(
        superpoints=top_p.points,
        gnn_features=gp,
        conditioned=fp,
        overlap=op,
        cross_overlap=cross_overlap(fp, fq, oq, cfg.temperature),
    )
    state_q = BottleneckState(
        superpoints=top_q.points,
        gnn_features=gq,
        conditioned=fq,
        overlap=oq,
        cross_overlap=cross_overlap(fq, fp, op, cfg.temperature),
    )
    return state_p, state_q


@dataclass
class PairForward:
    """Everything one forward pass produces for a source/target pair."""

    pyramid_p: list[PyramidLevel]
    pyramid_q: list[PyramidLevel]
    state_p: BottleneckState
    state_q: BottleneckState
    out_p: DecodeOut
    out_q: DecodeOut


def forward_pair(
    pyramid_p: list[PyramidLevel],
    pyramid_q: list[PyramidLevel],
    store: ad.ParamStore,
    cfg: ModelConfig,
) -> PairForward:
    """Full two-stream forward pass over prebuilt pyramids (shared weights)."""
    encode(pyramid_p, store, cfg)
    encode(pyramid_q, store, cfg)
    state_p, state_q = bottleneck_forward(pyramid_p, pyramid_q, store, cfg)
    out_p = decode(pyramid_p, state_p.conditioned, state_p.overlap, state_p.cross_overlap, store, cfg)
    out_q = decode(pyramid_q, state_q.conditioned, state_q.overlap, state_q.cross_overlap, store, cfg)
    return PairForward(
        pyramid_p=pyramid_p,
        pyramid_q=pyramid_q,
        state_p=state_p,
        state_q=state_q,
        out_p=out_p,
        out_q=out_q,
    )


@dataclass(frozen=True)
class ScoredCloud:
    """Detached per-point network outputs for downstream matching."""

    points: Points
    descriptors: NDArray[np.float64]
    overlap: NDArray[np.float64]
    matchability: NDArray[np.float64]

    def __post_init__(self) -> None:
        n = len(self.points)
        if not (len(self.descriptors) == len(self.overlap) == len(self.matchability) == n):
            raise ValueError("scored cloud field lengths disagree")


def scored_cloud(points: Points, out: DecodeOut) -> ScoredCloud:
    return ScoredCloud(
        points=points,
        descriptors=out.descriptors.data.copy(),
        overlap=out.overlap.data[:, 0].copy(),
        matchability=out.matchability.data[:, 0].copy(),
    )
