"""Circle, overlap and matchability losses against closed forms and oracles."""

import math

import numpy as np
import pytest

from overlapreg import autodiff as ad
from overlapreg.geometry import CorrespondenceLabels, RigidTransform, gt_correspondences
from overlapreg.losses import (
    LossConfig,
    anchor_match_rate,
    circle_loss,
    matchability_labels,
    matchability_loss,
    overlap_loss,
    sample_anchors,
    total_loss,
)
from overlapreg.synth import random_rigid, sample_shape

RNG = np.random.default_rng

CFG = LossConfig()


def single_pair_labels():
    """One matchable anchor on each side with margins exactly met."""
    positive = np.array([[True, False], [False, False]])
    negative = np.array([[False, True], [True, False]])
    matchable = np.array([True, False])
    return CorrespondenceLabels(positive=positive, negative=negative, matchable=matchable)


def margin_met_descriptors(cfg):
    # distances: d(p0,q0)=delta_p, d(p0,q1)=delta_n, d(p1,q0)=delta_n
    f_p = np.array([[0.0, 0.0], [cfg.delta_p + cfg.delta_n, 0.0]])
    f_q = np.array([[cfg.delta_p, 0.0], [-cfg.delta_n, 0.0]])
    return f_p, f_q


# ---------------------------------------------------------------------------
# circle loss
# ---------------------------------------------------------------------------


def test_circle_loss_is_log_two_when_both_margins_exactly_met():
    f_p, f_q = margin_met_descriptors(CFG)
    res = circle_loss(ad.constant(f_p), ad.constant(f_q), single_pair_labels(), CFG, seed=0)
    assert abs(float(res.loss.data) - math.log(2.0)) < 1e-12
    assert list(res.anchors_p) == [0]
    assert list(res.anchors_q) == [0]


def test_circle_loss_floor_and_monotone_in_negative_separation():
    # positive coincident with the anchor; negative pushed progressively
    # further out. Loss decreases to exactly log 2 once past delta_n and
    # never drops below it.
    values = []
    for d_neg in (1.0, 1.2, CFG.delta_n, 2.0):
        f_p = np.array([[0.0, 0.0], [d_neg, 0.0]])
        f_q = np.array([[0.0, 0.0], [-d_neg, 0.0]])
        res = circle_loss(ad.constant(f_p), ad.constant(f_q), single_pair_labels(), CFG, seed=0)
        values.append(float(res.loss.data))
    assert values[0] > values[1] > values[2]
    assert abs(values[2] - math.log(2.0)) < 1e-12
    assert abs(values[3] - math.log(2.0)) < 1e-12
    assert all(v >= math.log(2.0) - 1e-12 for v in values)


def circle_oracle(f_p, f_q, labels, anchors_p, anchors_q, cfg):
    """Scalar recomputation with python loops; beta from the same distances."""

    def one_side(fa, fb, pos, neg, anchors):
        total = 0.0
        for i in anchors:
            s_pos = 0.0
            for j in np.flatnonzero(pos[i]):
                d = float(np.linalg.norm(fa[i] - fb[j]))
                beta = cfg.gamma * max(d - cfg.delta_p, 0.0)
                s_pos += math.exp(beta * (d - cfg.delta_p))
            s_neg = 0.0
            for j in np.flatnonzero(neg[i]):
                d = float(np.linalg.norm(fa[i] - fb[j]))
                beta = cfg.gamma * max(cfg.delta_n - d, 0.0)
                s_neg += math.exp(beta * (cfg.delta_n - d))
            total += math.log1p(s_pos * s_neg)
        return total / len(anchors)

    lp = one_side(f_p, f_q, labels.positive, labels.negative, anchors_p)
    lq = one_side(f_q, f_p, labels.positive.T, labels.negative.T, anchors_q)
    return 0.5 * (lp + lq)


def random_labelled_instance(seed, n_p=14, n_q=16):
    rng = RNG(seed)
    p = rng.normal(size=(n_p, 3))
    q = rng.normal(size=(n_q, 3))
    d = np.linalg.norm(p[:, None] - q[None, :], axis=2)
    labels = CorrespondenceLabels(
        positive=d < np.quantile(d, 0.15),
        negative=d > np.quantile(d, 0.5),
        matchable=(d < np.quantile(d, 0.15)).any(axis=1),
    )
    f_p = rng.normal(size=(n_p, 6))
    f_q = rng.normal(size=(n_q, 6))
    f_p /= np.linalg.norm(f_p, axis=1, keepdims=True)
    f_q /= np.linalg.norm(f_q, axis=1, keepdims=True)
    return f_p, f_q, labels


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_circle_loss_matches_scalar_oracle(seed):
    f_p, f_q, labels = random_labelled_instance(seed)
    cfg = LossConfig(n_anchors=6)
    res = circle_loss(ad.constant(f_p), ad.constant(f_q), labels, cfg, seed=seed)
    expect = circle_oracle(f_p, f_q, labels, res.anchors_p, res.anchors_q, cfg)
    assert abs(float(res.loss.data) - expect) < 1e-12


def test_circle_loss_gradient_matches_finite_differences_with_frozen_beta():
    f_p0, f_q0, labels = random_labelled_instance(3, n_p=8, n_q=9)
    cfg = LossConfig(n_anchors=4)
    fp_t = ad.Tensor(f_p0.copy(), requires_grad=True)
    fq_t = ad.Tensor(f_q0.copy(), requires_grad=True)
    res = circle_loss(fp_t, fq_t, labels, cfg, seed=5)
    res.loss.backward()

    # freeze the beta arrays at the unperturbed point, then finite-difference
    # an oracle that treats them as constants
    def frozen(fa, fb, pos, neg, anchors, fa0, fb0):
        total = 0.0
        for i in anchors:
            s_pos = 0.0
            for j in np.flatnonzero(pos[i]):
                d0 = float(np.linalg.norm(fa0[i] - fb0[j]))
                beta = cfg.gamma * max(d0 - cfg.delta_p, 0.0)
                d = float(np.linalg.norm(fa[i] - fb[j]))
                s_pos += math.exp(beta * (d - cfg.delta_p))
            s_neg = 0.0
            for j in np.flatnonzero(neg[i]):
                d0 = float(np.linalg.norm(fa0[i] - fb0[j]))
                beta = cfg.gamma * max(cfg.delta_n - d0, 0.0)
                d = float(np.linalg.norm(fa[i] - fb[j]))
                s_neg += math.exp(beta * (cfg.delta_n - d))
            total += math.log1p(s_pos * s_neg)
        return total / len(anchors)

    def scalar(fp, fq):
        lp = frozen(fp, fq, labels.positive, labels.negative, res.anchors_p, f_p0, f_q0)
        lq = frozen(fq, fp, labels.positive.T, labels.negative.T, res.anchors_q, f_q0, f_p0)
        return 0.5 * (lp + lq)

    h = 1e-6
    rng = RNG(11)
    worst = 0.0
    for arr, grad in ((f_p0, fp_t.grad), (f_q0, fq_t.grad)):
        flat_idx = rng.choice(arr.size, size=10, replace=False)
        for k in flat_idx:
            i, c = divmod(int(k), arr.shape[1])
            fp, fq = f_p0.copy(), f_q0.copy()
            tgt = fp if arr is f_p0 else fq
            tgt[i, c] += h
            up = scalar(fp, fq)
            tgt[i, c] -= 2 * h
            dn = scalar(fp, fq)
            fd = (up - dn) / (2 * h)
            rel = abs(fd - grad[i, c]) / max(abs(fd), abs(grad[i, c]), 1.0)
            worst = max(worst, rel)
    assert worst < 1e-4


def test_sample_anchors_without_replacement_and_errors():
    rng = RNG(0)
    mask = np.zeros(10, dtype=bool)
    mask[[2, 5, 7]] = True
    picked = sample_anchors(mask, 8, rng)
    assert sorted(picked) == [2, 5, 7]
    picked2 = sample_anchors(np.ones(50, dtype=bool), 8, rng)
    assert len(picked2) == 8 and len(set(picked2.tolist())) == 8
    with pytest.raises(ValueError, match="no positive pairs"):
        sample_anchors(np.zeros(4, dtype=bool), 8, rng)


def test_circle_loss_raises_when_no_matchable_anchor():
    f_p, f_q, labels = random_labelled_instance(4)
    empty = CorrespondenceLabels(
        positive=np.zeros_like(labels.positive),
        negative=labels.negative,
        matchable=np.zeros_like(labels.matchable),
    )
    with pytest.raises(ValueError, match="no positive pairs"):
        circle_loss(ad.constant(f_p), ad.constant(f_q), empty, CFG, seed=0)


# ---------------------------------------------------------------------------
# overlap loss
# ---------------------------------------------------------------------------


def test_overlap_loss_half_predictions_give_ln_two_regardless_of_balance():
    for n_pos in (1, 5, 9):
        y = np.zeros(10, dtype=bool)
        y[:n_pos] = True
        o = ad.constant(np.full((10, 1), 0.5))
        loss, fallback = overlap_loss(o, y)
        assert not fallback
        assert abs(float(loss.data) - math.log(2.0)) < 1e-12


def test_overlap_loss_perfect_predictions_near_zero():
    y = np.array([True, True, False, False, False])
    o = ad.constant(np.where(y, 1 - 1e-9, 1e-9).reshape(-1, 1))
    loss, _ = overlap_loss(o, y)
    assert float(loss.data) < 1e-8


def test_overlap_loss_matches_scalar_oracle():
    rng = RNG(8)
    y = rng.random(17) < 0.3
    if not y.any():
        y[0] = True
    o = rng.uniform(0.02, 0.98, size=(17, 1))
    loss, fallback = overlap_loss(ad.constant(o), y)
    assert not fallback
    n = len(y)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    total = 0.0
    for i in range(n):
        w = n / (2.0 * n_pos) if y[i] else n / (2.0 * n_neg)
        p = o[i, 0]
        total += -w * (math.log(p) if y[i] else math.log(1 - p))
    assert abs(float(loss.data) - total / n) < 1e-12


def test_overlap_loss_single_class_falls_back_unweighted():
    o = RNG(9).uniform(0.1, 0.9, size=(6, 1))
    for y in (np.ones(6, dtype=bool), np.zeros(6, dtype=bool)):
        loss, fallback = overlap_loss(ad.constant(o), y)
        assert fallback
        expect = float(np.mean(-np.where(y, np.log(o[:, 0]), np.log(1 - o[:, 0]))))
        assert abs(float(loss.data) - expect) < 1e-12


def test_overlap_loss_shape_mismatch_error():
    with pytest.raises(ValueError):
        overlap_loss(ad.constant(np.full((4, 1), 0.5)), np.zeros(5, dtype=bool))


# ---------------------------------------------------------------------------
# matchability
# ---------------------------------------------------------------------------


def test_matchability_labels_all_true_for_identical_aligned_clouds():
    pts = sample_shape("blob", 40, seed=1)
    gt = random_rigid(30.0, 0.4, seed=2)
    desc = RNG(2).normal(size=(40, 5))
    q = gt.apply(pts)
    labels_p = matchability_labels(desc, desc.copy(), pts, q, gt, 1e-6)
    labels_q = matchability_labels(desc.copy(), desc, q, pts, gt.inverse(), 1e-6)
    assert labels_p.all() and labels_q.all()


def test_matchability_labels_match_exhaustive_oracle():
    rng = RNG(3)
    p = rng.normal(size=(12, 3))
    q = rng.normal(size=(15, 3))
    dp = rng.normal(size=(12, 4))
    dq = rng.normal(size=(15, 4))
    gt = random_rigid(25.0, 0.3, seed=4)
    r_m = 1.0
    labels_p = matchability_labels(dp, dq, p, q, gt, r_m)
    labels_q = matchability_labels(dq, dp, q, p, gt.inverse(), r_m)
    p_al = gt.apply(p)
    for i in range(12):
        j = int(np.argmin(np.linalg.norm(dq - dp[i], axis=1)))
        assert labels_p[i] == (np.linalg.norm(p_al[i] - q[j]) < r_m)
    for j in range(15):
        i = int(np.argmin(np.linalg.norm(dp - dq[j], axis=1)))
        assert labels_q[j] == (np.linalg.norm(gt.inverse().apply(q)[j] - p[i]) < r_m)


def test_matchability_labels_random_descriptors_tiny_radius_all_false():
    rng = RNG(5)
    p = rng.normal(size=(30, 3))
    q = rng.normal(size=(30, 3))
    gt = RigidTransform.identity()
    labels_p = matchability_labels(rng.normal(size=(30, 6)), rng.normal(size=(30, 6)), p, q, gt, 1e-9)
    assert not labels_p.any()


def test_matchability_loss_half_predictions_and_oracle():
    y = np.array([True, False, True])
    m = ad.constant(np.full((3, 1), 0.5))
    assert abs(float(matchability_loss(m, y).data) - math.log(2.0)) < 1e-12
    vals = np.array([0.8, 0.3, 0.6]).reshape(-1, 1)
    got = float(matchability_loss(ad.constant(vals), y).data)
    expect = -(math.log(0.8) + math.log(0.7) + math.log(0.6)) / 3
    assert abs(got - expect) < 1e-12


def test_anchor_match_rate_extremes():
    pts = sample_shape("blob", 25, seed=6)
    gt = random_rigid(20.0, 0.2, seed=7)
    q = gt.apply(pts)
    desc = RNG(7).normal(size=(25, 4))
    idx = np.arange(25)
    # identical descriptors in matching order: every anchor matches
    assert anchor_match_rate(desc, desc, idx, idx, gt.apply(pts), q, 1e-6) == 1.0
    # descriptors sending everything to the wrong place: zero
    bad = np.roll(desc, 5, axis=0)
    assert anchor_match_rate(desc, bad, idx, idx, gt.apply(pts), q, 1e-6) == 0.0


# ---------------------------------------------------------------------------
# combination and gating
# ---------------------------------------------------------------------------


def test_total_loss_gating_and_weights():
    c = ad.constant(np.array(2.0))
    o = ad.constant(np.array(0.5))
    m = ad.constant(np.array(0.25))
    cfg = LossConfig(weights=(1.0, 2.0, 4.0))
    off = total_loss(c, o, m, cfg, include_matchability=False)
    on = total_loss(c, o, m, cfg, include_matchability=True)
    assert abs(float(off.data) - (2.0 + 1.0)) < 1e-12
    assert abs(float(on.data) - (2.0 + 1.0 + 1.0)) < 1e-12


def test_gradients_flow_through_combined_objective():
    f_p, f_q, labels = random_labelled_instance(6, n_p=10, n_q=10)
    cfg = LossConfig(n_anchors=4)
    fp_t = ad.Tensor(f_p.copy(), requires_grad=True)
    res = circle_loss(fp_t, ad.constant(f_q), labels, cfg, seed=1)
    y = labels.matchable
    o = ad.Tensor(np.full((10, 1), 0.4), requires_grad=True)
    ov, _ = overlap_loss(o, y)
    m = ad.Tensor(np.full((10, 1), 0.6), requires_grad=True)
    ml = matchability_loss(m, y)
    total = total_loss(res.loss, ov, ml, cfg, include_matchability=True)
    total.backward()
    assert fp_t.grad is not None and np.isfinite(fp_t.grad).all()
    assert o.grad is not None and np.abs(o.grad).sum() > 0
    assert m.grad is not None and np.abs(m.grad).sum() > 0
