import math

import numpy as np
import pytest

from conftest import SYNTH_SETTINGS, make_scene
from reidcalib.geometry import PoseSE3, exp_so3
from reidcalib.metrics import (
    InlierStats,
    camera_pose_error,
    err_ratio,
    mean_pose_error,
    rebase,
    reprojection_error_metric,
)
from reidcalib.pipeline import calibrate
from reidcalib.synth import calibration_inputs


def at_center(R, c):
    R = np.asarray(R, float)
    return PoseSE3(R, -R @ np.asarray(c, float))


def test_pose_error_identical_is_zero(exact_scene):
    _, gt, _ = exact_scene
    err = camera_pose_error(gt.relative_poses(0), gt.poses, reference=0)
    assert max(max(v) for v in err.values()) < 1e-9
    assert camera_pose_error(gt.poses, gt.poses)[2][0] == 0.0
    assert max(mean_pose_error(err, skip=[0])) < 1e-9


def test_pose_error_center_shift_in_mm():
    gt = {0: PoseSE3.identity(), 1: at_center(np.eye(3), (1, 0, 0))}
    est = {0: PoseSE3.identity(), 1: at_center(np.eye(3), (1, 0, 0.3))}
    pos, rot = camera_pose_error(est, gt)[1]
    assert pos == pytest.approx(300.0, abs=1e-9) and rot == 0.0


def test_pose_error_one_degree_about_z():
    R = exp_so3([0.2, -0.4, 0.1])
    gt = {0: PoseSE3.identity(), 1: PoseSE3(R, np.array([1.0, 2.0, 3.0]))}
    est = {0: PoseSE3.identity(), 1: PoseSE3(exp_so3([0, 0, math.radians(1.0)]) @ R, gt[1].translation)}
    _, rot = camera_pose_error(est, gt)[1]
    assert abs(rot - 1.0) < 1e-9


def test_pose_error_rebases_ground_truth():
    rng = np.random.default_rng(0)
    world = {c: PoseSE3(exp_so3(rng.normal(size=3)), rng.normal(size=3) * 5) for c in range(3)}
    est = rebase(world, 1)
    assert np.allclose(est[1].rotation, np.eye(3)) and np.allclose(est[1].translation, 0)
    err = camera_pose_error(est, world, reference=1)
    assert max(v[0] for v in err.values()) < 1e-9


def test_pose_error_id_mismatch():
    with pytest.raises(ValueError):
        camera_pose_error({0: PoseSE3.identity()}, {1: PoseSE3.identity()})


def test_rpe_zero_at_ground_truth(exact_scene):
    _, gt, data = exact_scene
    report = reprojection_error_metric(gt.relative_poses(0), data.annotated, gt.intrinsics)
    assert report.rpe < 1e-9 and report.excluded == 0
    assert len(report.per_pair) == 6


def test_rpe_excludes_behind_camera_pairs(exact_scene, caplog):
    _, gt, data = exact_scene
    poses = gt.relative_poses(0)
    # flip camera 1 around: every annotated pair with it lands behind
    flipped = dict(poses)
    flipped[1] = PoseSE3(exp_so3([0, math.pi, 0]) @ poses[1].rotation, poses[1].translation)
    report = reprojection_error_metric(flipped, data.annotated, gt.intrinsics)
    assert report.excluded > 0 and "excluded" in caplog.text
    assert math.isfinite(report.rpe)


def test_rpe_noisy_run_below_three_sigma():
    sigma = 2.0
    _, gt, data = make_scene(seed=1, pixel_noise_sigma=sigma, center_offset_radius=2.0)
    result = calibrate(calibration_inputs(gt, data), SYNTH_SETTINGS)
    assert reprojection_error_metric(result.poses, data.annotated, gt.intrinsics).rpe < 3 * sigma


def test_err_ratio_examples():
    # documentation reference: 2.30 px on 720x576 is reported as 0.40 %
    assert round(err_ratio(2.30, 720, 576), 2) == 0.40
    assert err_ratio(0.0, 720, 576) == 0.0
    assert err_ratio(5.76, 720, 576) == pytest.approx(1.00, abs=1e-12)
    with pytest.raises(ValueError):
        err_ratio(1.0, 0, 576)


def test_err_ratio_resolution_invariant(exact_scene):
    """Doubling resolution and intrinsics doubles RPE; the ratio is unchanged."""
    _, gt, data = exact_scene
    rng = np.random.default_rng(3)
    poses = {c: p if c == 0 else PoseSE3(exp_so3(rng.normal(0, 0.01, 3)) @ p.rotation, p.translation + rng.normal(0, 0.1, 3))
             for c, p in gt.relative_poses(0).items()}
    k2 = {c: k.scaled(2.0) for c, k in gt.intrinsics.items()}
    ann2 = {key: [(tuple(2 * np.array(a)), tuple(2 * np.array(b))) for a, b in v] for key, v in data.annotated.items()}
    r1 = reprojection_error_metric(poses, data.annotated, gt.intrinsics).rpe
    r2 = reprojection_error_metric(poses, ann2, k2).rpe
    assert r1 > 1.0
    assert r2 == pytest.approx(2 * r1, rel=1e-6)
    k, kk = gt.intrinsics[0], k2[0]
    assert err_ratio(r2, kk.width, kk.height) == pytest.approx(err_ratio(r1, k.width, k.height), rel=1e-6)


def test_inlier_stats_rates():
    s = InlierStats(correct=100, wrong=50, correct_accepted=97, wrong_accepted=1)
    assert s.recall == 0.97 and s.accepted_outlier_rate == 0.02
    assert InlierStats(0, 0, 0, 0).recall == 1.0
