"""Evaluation metrics against scalar oracles and analytic cases."""

import csv
import json
import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from overlapreg.geometry import RigidTransform
from overlapreg.matching import CorrespondenceSet
from overlapreg.metrics import (
    EvalThresholds,
    PairMetrics,
    chamfer_modified,
    ecdf_curve,
    feature_match_recall,
    gt_correspondence_set,
    inlier_ratio,
    overlap_after_filtering,
    registration_recall,
    registration_rmse,
    rre_rte,
    write_ecdf_csv,
    write_metrics_csv,
    write_summary_json,
)
from overlapreg.synth import random_rigid, sample_shape

from oracles import (
    chamfer_oracle,
    ecdf_oracle,
    inlier_ratio_oracle,
    overlap_ratio_oracle,
    pose_error_oracle,
    rmse_oracle,
)

RNG = np.random.default_rng


def identity_pairs(n):
    return CorrespondenceSet(pairs=np.stack([np.arange(n)] * 2, axis=1))


def test_eval_thresholds_defaults_and_validation():
    t = EvalThresholds()
    assert (t.tau1, t.tau2, t.rmse_thresh) == (0.10, 0.05, 0.2)
    with pytest.raises(ValueError):
        EvalThresholds(tau1=0.0)


# ---------------------------------------------------------------------------
# inlier ratio / FMR
# ---------------------------------------------------------------------------


def test_inlier_ratio_extremes_and_oracle():
    p = sample_shape("blob", 30, seed=0)
    gt = random_rigid(40.0, 0.6, seed=1)
    q_exact = gt.apply(p)
    corr = identity_pairs(30)
    assert inlier_ratio(corr, p, q_exact, gt, 0.10) == 1.0
    assert inlier_ratio(corr, p, q_exact + 5.0, gt, 0.10) == 0.0
    q_mixed = q_exact.copy()
    q_mixed[::3] += 0.5
    got = inlier_ratio(corr, p, q_mixed, gt, 0.10)
    expect = inlier_ratio_oracle(p, q_mixed, gt.rotation, gt.translation, 0.10)
    assert abs(got - expect) < 1e-10


def test_inlier_ratio_empty_flagged_zero():
    empty = CorrespondenceSet(pairs=np.empty((0, 2), dtype=np.int64))
    p = RNG(0).normal(size=(4, 3))
    with pytest.warns(UserWarning, match="empty"):
        assert inlier_ratio(empty, p, p, RigidTransform.identity(), 0.1) == 0.0


def test_inlier_ratio_strict_boundary():
    p = np.zeros((3, 3))
    q = np.array([[0.10, 0, 0], [0.10 - 1e-12, 0, 0], [0.2, 0, 0]])
    got = inlier_ratio(identity_pairs(3), p, q, RigidTransform.identity(), 0.10)
    assert got == pytest.approx(1 / 3)


def test_feature_match_recall_boundary_strict():
    assert feature_match_recall([1.0, 1.0], 0.05) == 1.0
    assert feature_match_recall([0.0, 0.0], 0.05) == 0.0
    assert feature_match_recall([0.05], 0.05) == 0.0
    assert feature_match_recall([0.05 + 1e-12, 0.05], 0.05) == 0.5
    assert feature_match_recall([], 0.05) == 0.0


# ---------------------------------------------------------------------------
# RMSE / registration recall
# ---------------------------------------------------------------------------


def test_registration_rmse_exact_and_offset_and_oracle():
    p = sample_shape("blob", 25, seed=2)
    gt = random_rigid(30.0, 0.4, seed=3)
    q = gt.apply(p)
    corr = identity_pairs(25)
    assert registration_rmse(gt, corr, p, q) < 1e-12
    shifted = RigidTransform(gt.rotation, gt.translation + np.array([0, 0, 0.07]))
    assert registration_rmse(shifted, corr, p, q) == pytest.approx(0.07, abs=1e-12)
    t_rand = random_rigid(20.0, 0.2, seed=4)
    got = registration_rmse(t_rand, corr, p, q)
    expect = rmse_oracle(p, q, t_rand.rotation, t_rand.translation)
    assert abs(got - expect) < 1e-10


def test_registration_rmse_empty_error():
    empty = CorrespondenceSet(pairs=np.empty((0, 2), dtype=np.int64))
    p = RNG(1).normal(size=(4, 3))
    with pytest.raises(ValueError, match="empty ground-truth"):
        registration_rmse(RigidTransform.identity(), empty, p, p)


def test_gt_correspondence_set_strict_radius():
    p = np.zeros((2, 3))
    q = np.array([[0.1, 0.0, 0.0], [0.05, 0.0, 0.0]])
    cs = gt_correspondence_set(p, q, RigidTransform.identity(), radius=0.1)
    # both source points share NN q1 at distance 0.05 < 0.1
    np.testing.assert_array_equal(cs.pairs, [[0, 1], [1, 1]])
    cs2 = gt_correspondence_set(p, q[:1], RigidTransform.identity(), radius=0.1)
    assert len(cs2) == 0


def test_registration_recall_boundaries():
    assert registration_recall([0.1, 0.19], 0.2) == 1.0
    assert registration_recall([0.2], 0.2) == 0.0
    assert registration_recall([0.3, 0.1], 0.2) == 0.5
    assert registration_recall([], 0.2) == 0.0


# ---------------------------------------------------------------------------
# pose errors
# ---------------------------------------------------------------------------


def test_rre_rte_identity_and_half_turn():
    t = random_rigid(50.0, 1.0, seed=5)
    assert rre_rte(t, t) == (0.0, 0.0)
    half = RigidTransform(np.diag([1.0, -1.0, -1.0]), np.zeros(3))
    rre, rte = rre_rte(half, RigidTransform.identity())
    assert rre == pytest.approx(180.0)
    assert rte == 0.0


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_rre_matches_quaternion_angle_oracle(seed):
    a = random_rigid(120.0, 1.0, seed=seed)
    b = random_rigid(120.0, 1.0, seed=seed + 50)
    rre, rte = rre_rte(a, b)
    rel = Rotation.from_matrix(a.rotation.T @ b.rotation)
    assert abs(rre - math.degrees(rel.magnitude())) < 1e-8
    trace_based = pose_error_oracle(a.rotation, a.translation, b.rotation, b.translation)
    assert abs(rre - trace_based[0]) < 1e-12
    assert abs(rte - trace_based[1]) < 1e-12


def test_rre_symmetric_in_arguments():
    a = random_rigid(80.0, 0.5, seed=6)
    b = random_rigid(80.0, 0.5, seed=7)
    assert rre_rte(a, b)[0] == pytest.approx(rre_rte(b, a)[0], abs=1e-12)


# ---------------------------------------------------------------------------
# chamfer
# ---------------------------------------------------------------------------


def test_chamfer_zero_on_identical_clouds():
    p = sample_shape("blob", 40, seed=8)
    assert chamfer_modified(p, p, RigidTransform.identity(), p, p) == 0.0


def test_chamfer_single_points_analytic():
    p = np.zeros((1, 3))
    q = np.array([[0.0, 0.0, 0.3]])
    got = chamfer_modified(p, q, RigidTransform.identity(), p, q)
    assert got == pytest.approx(2 * 0.3**2, abs=1e-15)


def test_chamfer_matches_exhaustive_oracle():
    rng = RNG(9)
    p_raw = sample_shape("blob", 50, seed=10)
    q_raw = sample_shape("blob", 45, seed=11)
    p = p_raw[rng.choice(50, 20, replace=False)]
    q = q_raw[rng.choice(45, 18, replace=False)]
    t = random_rigid(35.0, 0.5, seed=12)
    got = chamfer_modified(p, q, t, p_raw, q_raw)
    expect = chamfer_oracle(p, q_raw, q, p_raw, t.rotation, t.translation)
    assert abs(got - expect) < 1e-10
    assert got >= 0.0


def test_chamfer_empty_raw_error():
    p = RNG(2).normal(size=(4, 3))
    with pytest.raises(ValueError, match="raw"):
        chamfer_modified(p, p, RigidTransform.identity(), np.empty((0, 3)), p)


# ---------------------------------------------------------------------------
# ecdf / overlap filtering
# ---------------------------------------------------------------------------


def test_ecdf_strict_counting_and_oracle():
    values = [0.5, 0.5, 0.5]
    curve = ecdf_curve(values, [0.5])
    assert curve[0, 1] == 0.0
    curve2 = ecdf_curve(values, [0.5 + 1e-12, 1.0])
    assert curve2[0, 1] == 1.0 and curve2[1, 1] == 1.0
    vals = RNG(3).uniform(0, 1, 40)
    grid = np.linspace(0, 1, 11)
    got = ecdf_curve(vals, grid)
    expect = ecdf_oracle(vals, grid)
    np.testing.assert_allclose(got[:, 1], expect, atol=1e-12)
    with pytest.raises(ValueError):
        ecdf_curve([], grid)


def test_overlap_after_filtering_all_ones_scores_unchanged():
    p = sample_shape("blob", 30, seed=13)
    gt = random_rigid(25.0, 0.3, seed=14)
    q = gt.apply(p)
    before, after = overlap_after_filtering(p, q, gt, np.ones(30), np.ones(30), 0.05)
    assert before == after == 1.0


def test_overlap_after_filtering_gt_scores_give_perfect_after():
    # half of P genuinely overlaps Q; scoring exactly the true labels makes
    # the filtered source overlap complete
    p_over = sample_shape("blob", 20, seed=15)
    p_only = sample_shape("blob", 20, seed=16) + np.array([10.0, 0, 0])
    p = np.concatenate([p_over, p_only])
    gt = random_rigid(30.0, 0.4, seed=17)
    q = gt.apply(p_over)
    o_p = np.concatenate([np.ones(20), np.zeros(20)])
    o_q = np.ones(20)
    before, after = overlap_after_filtering(p, q, gt, o_p, o_q, 0.05)
    assert before == pytest.approx(0.5)
    assert after == 1.0


def test_overlap_after_filtering_oracle_and_empty_flag():
    rng = RNG(4)
    p = sample_shape("blob", 25, seed=18)
    gt = random_rigid(20.0, 0.2, seed=19)
    q = gt.apply(p) + rng.normal(0, 0.02, size=(25, 3))
    o_p = rng.uniform(0, 1, 25)
    o_q = rng.uniform(0, 1, 25)
    before, after = overlap_after_filtering(p, q, gt, o_p, o_q, 0.05)
    assert before == pytest.approx(
        overlap_ratio_oracle(p, q, gt.rotation, gt.translation, 0.05), abs=1e-12
    )
    keep_p, keep_q = o_p >= 0.5, o_q >= 0.5
    assert after == pytest.approx(
        overlap_ratio_oracle(p[keep_p], q[keep_q], gt.rotation, gt.translation, 0.05),
        abs=1e-12,
    )
    with pytest.warns(UserWarning, match="empty"):
        _, after0 = overlap_after_filtering(p, q, gt, np.zeros(25), o_q, 0.05)
    assert after0 == 0.0
    with pytest.raises(ValueError, match="score lengths"):
        overlap_after_filtering(p, q, gt, o_p[:-1], o_q, 0.05)


# ---------------------------------------------------------------------------
# emitters
# ---------------------------------------------------------------------------


def sample_rows():
    return [
        PairMetrics("pair-000", 0.62, 200, 0.41, 0.015, 1.25, 0.04, 0.0011, True),
        PairMetrics("pair-001", 0.33, 200, 0.05, 0.35, 24.0, 0.5, 0.21, False),
    ]


def test_metrics_csv_roundtrip_and_determinism(tmp_path):
    path_a = tmp_path / "a.csv"
    path_b = tmp_path / "b.csv"
    write_metrics_csv(str(path_a), sample_rows())
    write_metrics_csv(str(path_b), sample_rows())
    assert path_a.read_bytes() == path_b.read_bytes()
    with open(path_a) as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["pair_id"] == "pair-000"
    assert float(rows[0]["inlier_ratio"]) == 0.41
    assert rows[1]["success"] == "0"


def test_ecdf_csv_and_summary_json(tmp_path):
    curve = ecdf_curve([0.2, 0.4, 0.9], np.linspace(0, 1, 5))
    path = tmp_path / "ecdf.csv"
    write_ecdf_csv(str(path), curve)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,ecdf"
    assert len(lines) == 6
    spath = tmp_path / "summary.json"
    write_summary_json(str(spath), {"rr": 0.5, "fmr": 1.0})
    obj = json.loads(spath.read_text())
    assert obj == {"rr": 0.5, "fmr": 1.0}
    spath2 = tmp_path / "summary2.json"
    write_summary_json(str(spath2), {"fmr": 1.0, "rr": 0.5})
    assert spath.read_bytes() == spath2.read_bytes()
