import numpy as np
import pytest

from reidcalib.geometry import CameraIntrinsics, PoseSE3, RansacConfig, exp_so3, look_at
from reidcalib.metrics import camera_pose_error, mean_pose_error
from reidcalib.pipeline import Settings, calibrate
from reidcalib.synth import SceneSpec, calibration_inputs, generate_scene, render_observations

# synthetic boxes carry several px of center noise, so the pipeline runs with
# a 5 px epipolar threshold on them
SYNTH_SETTINGS = Settings(ransac=RansacConfig(threshold_px=5.0, solver="5point"))


def make_scene(**kw):
    spec = SceneSpec(**kw)
    gt = generate_scene(spec)
    data = render_observations(gt, spec)
    return spec, gt, data


def run_scene(seed=0, settings=SYNTH_SETTINGS, **kw):
    """Calibrate a synthetic scene; returns (result, gt, data, (mm, deg))."""
    _, gt, data = make_scene(seed=seed, **kw)
    result = calibrate(calibration_inputs(gt, data), settings)
    err = mean_pose_error(camera_pose_error(result.poses, gt.poses, reference=0), skip=[0])
    return result, gt, data, err


def simple_intrinsics(f=500.0, w=640, h=480, dist=None):
    return CameraIntrinsics(f, f, w / 2, h / 2, w, h, np.zeros(5) if dist is None else dist)


def random_pose(rng, baseline=1.0, metric=False):
    R = exp_so3(rng.normal(scale=0.3, size=3))
    t = rng.normal(size=3)
    t = t / np.linalg.norm(t) * baseline
    return PoseSE3(R, t, metric=metric)


def random_points(rng, n, pose_b, depth=(4.0, 10.0)):
    """Points in front of the identity camera and ``pose_b``."""
    out = []
    while len(out) < n:
        X = np.array([rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(*depth)])
        if pose_b.transform(X[None])[0, 2] > 0.5:
            out.append(X)
    return np.array(out)


def normalized(points, pose):
    Xc = pose.transform(points)
    return Xc[:, :2] / Xc[:, 2:3]


@pytest.fixture(scope="session")
def exact_scene():
    return make_scene(seed=0)


@pytest.fixture(scope="session")
def exact_run():
    return run_scene(seed=0)


@pytest.fixture(scope="session")
def ring_network():
    """Four cameras around a 20 m square looking at its middle, plus 100 points."""
    rng = np.random.default_rng(7)
    k = simple_intrinsics(1000.0, 1920, 1080)
    centers = [(-2, -2, 2.5), (22, -2, 2.8), (22, 22, 2.2), (-2, 22, 2.6)]
    world = {c: look_at(np.array(p, float), np.array([10.0, 10.0, 1.0])) for c, p in enumerate(centers)}
    ref_inv = world[0].inverse()
    poses = {c: p.compose(ref_inv) for c, p in world.items()}
    pts_w = np.column_stack([rng.uniform(2, 18, 100), rng.uniform(2, 18, 100), rng.uniform(0.3, 2.0, 100)])
    pts = world[0].transform(pts_w)
    return poses, {c: k for c in poses}, pts


# persistent per-(person, camera) center bias on top of per-frame jitter, the
# closest synthetic stand-in for real box centers drifting off the body mass
BIASED = dict(pixel_noise_sigma=2.0, center_offset_radius=2.0, center_bias_radius=4.0)


@pytest.fixture(scope="session")
def count_study_rows():
    """study_count rows for k in (10, 30, 50, all) over ten biased scenes."""
    from reidcalib.studies import study_count

    out = []
    for seed in range(10):
        _, gt, data = make_scene(seed=seed, **BIASED)
        out.append(study_count(calibration_inputs(gt, data), SYNTH_SETTINGS, gt.poses, counts=[10, 30, 50, None]))
    return out
