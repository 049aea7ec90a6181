"""Bottleneck overlap-attention ops: intra-cloud GNN, cross-attention, scores.

All ops act on autodiff Tensors and read weights from a ParamStore by name
prefix. The same prefixes are used for both clouds of a pair, which is what
makes the two streams share weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from overlapreg import autodiff as ad
from overlapreg.geometry import NeighborGraph, Points


def h_theta(x: ad.Tensor, store: ad.ParamStore, name: str, slope: float) -> ad.Tensor:
    """Linear layer, instance norm, LeakyReLU: the shared unit of every graph block."""
    y = ad.linear(x, store[f"{name}.weight"], store[f"{name}.bias"])
    y = ad.instance_norm(y, store[f"{name}.gamma"], store[f"{name}.beta"])
    return ad.leaky_relu(y, slope)


def init_h_theta(store: ad.ParamStore, name: str, n_in: int, n_out: int) -> None:
    store.add_linear(name, n_in, n_out)
    store.add_norm(name, n_out)


def edge_conv(
    x: ad.Tensor,
    graph: NeighborGraph,
    store: ad.ParamStore,
    name: str,
    slope: float,
) -> ad.Tensor:
    """One edge-convolution round: max over edges of h_theta(cat[x_i, x_j - x_i])."""
    idx = graph.indices
    n, k = idx.shape
    centers = np.repeat(np.arange(n, dtype=np.int64), k)
    xi = ad.gather_rows(x, centers)
    xj = ad.gather_rows(x, idx.reshape(-1))
    edges = ad.concat_cols([xi, ad.sub(xj, xi)])
    return ad.neighborhood_max(h_theta(edges, store, name, slope), k)


def init_gnn_block(store: ad.ParamStore, prefix: str, b: int) -> None:
    init_h_theta(store, f"{prefix}.round0", 2 * b, b)
    init_h_theta(store, f"{prefix}.round1", 2 * b, b)
    init_h_theta(store, f"{prefix}.combine", 3 * b, b)


def gnn_block(
    x: ad.Tensor,
    graph: NeighborGraph,
    store: ad.ParamStore,
    prefix: str,
    slope: float,
) -> ad.Tensor:
    """Two unshared edge-conv rounds, then a combine layer over all three stages."""
    x1 = edge_conv(x, graph, store, f"{prefix}.round0", slope)
    x2 = edge_conv(x1, graph, store, f"{prefix}.round1", slope)
    return h_theta(ad.concat_cols([x, x1, x2]), store, f"{prefix}.combine", slope)


def init_cross_attention(store: ad.ParamStore, prefix: str, b: int) -> None:
    store.add_linear(f"{prefix}.w_s", b, b, bias=False)
    store.add_linear(f"{prefix}.w_k", b, b, bias=False)
    store.add_linear(f"{prefix}.w_v", b, b, bias=False)
    store.add_linear(f"{prefix}.mlp0", 2 * b, b)
    store.add_norm(f"{prefix}.mlp0", b)
    store.add_linear(f"{prefix}.mlp1", b, b)
    store.add_norm(f"{prefix}.mlp1", b)
    store.add_linear(f"{prefix}.mlp2", b, b)


def cross_attention(
    x_src: ad.Tensor,
    x_dst: ad.Tensor,
    store: ad.ParamStore,
    prefix: str,
    heads: int,
) -> ad.Tensor:
    """Condition the source stream on the destination stream.

    Multi-head scaled dot-product attention over the destination superpoints;
    the update is residual: x + MLP(cat[s, m]). Softmax scaling uses the full
    width sqrt(b) and the attention matrix is materialised exactly once per
    direction, so cost scales as N' * M'.
    """
    b = x_src.data.shape[1]
    if b % heads != 0:
        raise ValueError("feature width must be divisible by the head count")
    s = ad.linear(x_src, store[f"{prefix}.w_s.weight"])
    k = ad.linear(x_dst, store[f"{prefix}.w_k.weight"])
    v = ad.linear(x_dst, store[f"{prefix}.w_v.weight"])
    scale = 1.0 / np.sqrt(b)
    width = b // heads
    messages = []
    for h in range(heads):
        lo, hi = h * width, (h + 1) * width
        sh = ad.slice_cols(s, lo, hi)
        kh = ad.slice_cols(k, lo, hi)
        vh = ad.slice_cols(v, lo, hi)
        attn = ad.softmax_rows(ad.mul_const(ad.matmul_t(sh, kh), scale))
        messages.append(ad.matmul(attn, vh))
    m = ad.concat_cols(messages)
    z = ad.concat_cols([s, m])
    h1 = ad.relu(
        ad.instance_norm(
            ad.linear(z, store[f"{prefix}.mlp0.weight"], store[f"{prefix}.mlp0.bias"]),
            store[f"{prefix}.mlp0.gamma"],
            store[f"{prefix}.mlp0.beta"],
        )
    )
    h2 = ad.relu(
        ad.instance_norm(
            ad.linear(h1, store[f"{prefix}.mlp1.weight"], store[f"{prefix}.mlp1.bias"]),
            store[f"{prefix}.mlp1.gamma"],
            store[f"{prefix}.mlp1.beta"],
        )
    )
    update = ad.linear(h2, store[f"{prefix}.mlp2.weight"], store[f"{prefix}.mlp2.bias"])
    return ad.add(x_src, update)


def overlap_scores(features: ad.Tensor, store: ad.ParamStore, name: str) -> ad.Tensor:
    """Project features to a single sigmoid score per point; shape (N, 1)."""
    return ad.sigmoid(ad.linear(features, store[f"{name}.weight"], store[f"{name}.bias"]))


def cross_overlap(
    f_src: ad.Tensor,
    f_dst: ad.Tensor,
    o_dst: ad.Tensor,
    temperature: float,
) -> ad.Tensor:
    """Soft-assign each source point's overlap from the other cloud's scores.

    Features are L2-normalised before the inner product so the temperature
    acts on cosine similarities in [-1, 1]. Each output is a convex
    combination of o_dst; temperature -> 0 approaches hard nearest-feature
    assignment.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    fs = ad.l2_normalize_rows(f_src)
    fd = ad.l2_normalize_rows(f_dst)
    w = ad.softmax_rows(ad.mul_const(ad.matmul_t(fs, fd), 1.0 / temperature))
    return ad.matmul(w, o_dst)


@dataclass
class BottleneckState:
    """Per-cloud bottleneck outputs; score tensors are column vectors (N', 1)."""

    superpoints: Points
    gnn_features: ad.Tensor
    conditioned: ad.Tensor
    overlap: ad.Tensor
    cross_overlap: ad.Tensor
