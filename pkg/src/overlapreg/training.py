"""Batch-size-1 SGD training loop over generated pair samples.

Pair geometry (pyramids, ground-truth labels) is frozen per pair, so it is
prepared once and reused across epochs; only descriptor-dependent quantities
(matchability labels, anchor match rate) are recomputed each step.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .geometry import CorrespondenceLabels, Points, gt_correspondences, gt_overlap_labels
from .losses import (
    LossConfig,
    anchor_match_rate,
    circle_loss,
    matchability_labels,
    matchability_loss,
    overlap_loss,
    total_loss,
)
from .network import ModelConfig, PyramidLevel, build_pyramid, forward_pair
from .synth import PairSample


@dataclass(frozen=True)
class OptimConfig:
    """SGD with classical momentum and per-epoch exponential lr decay."""

    lr: float = 0.01
    momentum: float = 0.98
    weight_decay: float = 1.0e-6
    lr_decay: float = 0.95
    shuffle_seed: int = 0

    def __post_init__(self) -> None:
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must lie in (0, 1]")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay**epoch


@dataclass
class TrainState:
    """Mutable cross-epoch state; the matchability gate latches on."""

    epoch: int = 0
    matchability_on: bool = False


@dataclass(frozen=True)
class PreparedPair:
    """A PairSample with everything label- and graph-related precomputed."""

    sample: PairSample
    pyramid_p: list[PyramidLevel]
    pyramid_q: list[PyramidLevel]
    corr: CorrespondenceLabels
    overlap_labels_p: np.ndarray
    overlap_labels_q: np.ndarray
    aligned_source: Points


def prepare_pair(sample: PairSample, model_cfg: ModelConfig, loss_cfg: LossConfig) -> PreparedPair:
    gt_inv = sample.gt.inverse()
    return PreparedPair(
        sample=sample,
        pyramid_p=build_pyramid(sample.source, model_cfg),
        pyramid_q=build_pyramid(sample.target, model_cfg),
        corr=gt_correspondences(
            sample.source, sample.target, sample.gt, loss_cfg.r_positive, loss_cfg.r_safe
        ),
        overlap_labels_p=gt_overlap_labels(
            sample.source, sample.target, sample.gt, loss_cfg.r_overlap
        ),
        overlap_labels_q=gt_overlap_labels(
            sample.target, sample.source, gt_inv, loss_cfg.r_overlap
        ),
        aligned_source=sample.gt.apply(sample.source),
    )


@dataclass(frozen=True)
class StepReport:
    circle: float
    overlap: float
    matchability: float
    match_rate: float
    total: float
    overlap_fallback: bool


@dataclass(frozen=True)
class EpochReport:
    """Mean losses over one pass; serialised as one JSON object per epoch."""

    epoch: int
    lr: float
    circle: float
    overlap: float
    matchability: float
    match_rate: float
    matchability_on: bool
    n_pairs: int

    def json_line(self) -> str:
        return json.dumps(asdict(self))


def _anchor_seed(pair_seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence((int(pair_seed), int(epoch))).generate_state(1)[0])


def train_step(
    prep: PreparedPair,
    store: ad.ParamStore,
    state: TrainState,
    model_cfg: ModelConfig,
    loss_cfg: LossConfig,
    optim: OptimConfig,
    lr: float,
) -> StepReport:
    """One forward/backward/update on a single pair; latches the gate."""
    store.zero_grad()
    fw = forward_pair(prep.pyramid_p, prep.pyramid_q, store, model_cfg)
    desc_p, desc_q = fw.out_p.descriptors, fw.out_q.descriptors
    sample = prep.sample

    res = circle_loss(desc_p, desc_q, prep.corr, loss_cfg, seed=_anchor_seed(sample.seed, state.epoch))
    rate = anchor_match_rate(
        desc_p.data,
        desc_q.data,
        res.anchors_p,
        res.anchors_q,
        prep.aligned_source,
        sample.target,
        loss_cfg.r_match,
    )

    ov_p, fb_p = overlap_loss(fw.out_p.overlap, prep.overlap_labels_p)
    ov_q, fb_q = overlap_loss(fw.out_q.overlap, prep.overlap_labels_q)
    ov = ad.mul_const(ad.add(ov_p, ov_q), 0.5)

    labels_p = matchability_labels(
        desc_p.data, desc_q.data, sample.source, sample.target, sample.gt, loss_cfg.r_match
    )
    labels_q = matchability_labels(
        desc_q.data, desc_p.data, sample.target, sample.source, sample.gt.inverse(), loss_cfg.r_match
    )
    ml = ad.mul_const(
        ad.add(
            matchability_loss(fw.out_p.matchability, labels_p),
            matchability_loss(fw.out_q.matchability, labels_q),
        ),
        0.5,
    )

    if rate >= loss_cfg.matchability_gate:
        state.matchability_on = True
    total = total_loss(res.loss, ov, ml, loss_cfg, include_matchability=state.matchability_on)
    if not np.isfinite(total.data):
        raise FloatingPointError(f"non-finite loss on pair seed {sample.seed}")
    total.backward()
    sgd_step(store, lr, optim)
    # prepared pyramids outlive the step; drop their hold on this step's graph
    for level in prep.pyramid_p:
        level.features = None
    for level in prep.pyramid_q:
        level.features = None
    return StepReport(
        circle=float(res.loss.data),
        overlap=float(ov.data),
        matchability=float(ml.data),
        match_rate=float(rate),
        total=float(total.data),
        overlap_fallback=bool(fb_p or fb_q),
    )


def sgd_step(store: ad.ParamStore, lr: float, optim: OptimConfig) -> None:
    ad.sgd_step(store, lr, optim.momentum, optim.weight_decay)


def train_epoch(
    pairs: Sequence[PreparedPair],
    store: ad.ParamStore,
    state: TrainState,
    model_cfg: ModelConfig,
    loss_cfg: LossConfig,
    optim: OptimConfig,
) -> EpochReport:
    """One seeded-shuffle pass at lr0 * decay^epoch; advances state.epoch."""
    if len(pairs) == 0:
        raise ValueError("dataset must be nonempty")
    lr = optim.lr_at(state.epoch)
    rng = np.random.default_rng(np.random.SeedSequence((optim.shuffle_seed, state.epoch)))
    order = rng.permutation(len(pairs))
    sums = np.zeros(4)
    for idx in order:
        rep = train_step(pairs[idx], store, state, model_cfg, loss_cfg, optim, lr)
        sums += (rep.circle, rep.overlap, rep.matchability, rep.match_rate)
    means = sums / len(pairs)
    report = EpochReport(
        epoch=state.epoch,
        lr=lr,
        circle=float(means[0]),
        overlap=float(means[1]),
        matchability=float(means[2]),
        match_rate=float(means[3]),
        matchability_on=state.matchability_on,
        n_pairs=len(pairs),
    )
    state.epoch += 1
    return report


def fit(
    samples: Sequence[PairSample],
    store: ad.ParamStore,
    model_cfg: ModelConfig,
    loss_cfg: LossConfig,
    optim: OptimConfig,
    n_epochs: int,
    state: TrainState | None = None,
    log_path: str | None = None,
    on_epoch: Callable[[EpochReport], None] | None = None,
) -> tuple[TrainState, list[EpochReport]]:
    """Prepare every pair once, then run `n_epochs` passes from `state`."""
    if n_epochs < 0:
        raise ValueError("n_epochs must be non-negative")
    state = state if state is not None else TrainState()
    prepared = [prepare_pair(s, model_cfg, loss_cfg) for s in samples]
    reports = []
    for _ in range(n_epochs):
        report = train_epoch(prepared, store, state, model_cfg, loss_cfg, optim)
        reports.append(report)
        if log_path is not None:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(report.json_line() + "\n")
        if on_epoch is not None:
            on_epoch(report)
    return state, reports
