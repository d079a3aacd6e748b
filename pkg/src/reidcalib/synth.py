"""Synthetic camera networks with walking people, rendered to tracks and embeddings.

World frame: z up, ground plane z = 0, the walking area is
``[0, extent_x] x [0, extent_y]``.  Cameras stand just outside the
perimeter and look at the middle of the area.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .assoc import BBox, Tracklet
from .errors import ConfigError
from .geometry import CameraIntrinsics, PoseSE3, look_at, project_points

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SceneSpec:
    n_cameras: int = 4
    extent: tuple[float, float] = (20.0, 25.0)
    camera_height: tuple[float, float] = (2.0, 3.0)
    camera_margin: float = 1.0  # metres outside the walking area
    n_people: int = 8
    n_frames: int = 1500
    fps: float = 25.0
    walk_speed: float = 1.2
    pixel_noise_sigma: float = 0.0
    center_offset_radius: float = 0.0
    # persistent per-(person, camera) offset of the box center, in px
    center_bias_radius: float = 0.0
    body_height: float = 1.75
    height_jitter: float = 0.1  # per-person height drawn from body_height +- this
    body_mass_fraction: float = 0.55
    image_size: tuple[int, int] = (1920, 1080)
    focal_length: float = 1000.0
    distortion: tuple[float, ...] = (-0.02, 0.004, 0.0, 0.0, 0.0)
    embedding_dim: int = 64
    embedding_noise: float = 0.05
    wrong_association_fraction: float = 0.0
    n_prior_segments: int = 3
    n_annotated: int = 15
    seed: int = 0

    def __post_init__(self):
        if min(self.n_cameras, self.n_people, self.n_frames) < 1:
            raise ValueError("counts must be >= 1")
        if min(self.extent) <= 0 or self.body_height <= 0 or self.fps <= 0:
            raise ValueError("extents must be positive")


@dataclass(frozen=True)
class PriorSegment:
    person: int
    frame: int
    foot: np.ndarray
    head: np.ndarray

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.head - self.foot))


@dataclass
class GroundTruth:
    poses: dict[int, PoseSE3]  # world -> camera
    intrinsics: dict[int, CameraIntrinsics]
    ground: np.ndarray  # (people, frames, 2)
    heights: np.ndarray  # (people,)
    body_mass: np.ndarray  # (people, frames, 3)
    prior_segments: list[PriorSegment] = field(default_factory=list)

    def relative_poses(self, reference: int = 0) -> dict[int, PoseSE3]:
        """Poses re-expressed with ``reference`` as the world frame."""
        inv = self.poses[reference].inverse()
        return {c: p.compose(inv) for c, p in self.poses.items()}

    def body_mass_in(self, reference: int = 0) -> np.ndarray:
        return self.poses[reference].transform(self.body_mass.reshape(-1, 3)).reshape(self.body_mass.shape)


@dataclass
class RenderedData:
    tracklets: dict[int, list[Tracklet]]
    identity: dict[int, dict[int, int]]  # camera -> track id -> person index
    annotated: dict[tuple[int, int], list[tuple[tuple[float, float], tuple[float, float]]]]
    priors: list[dict]  # {"length", "observations": {camera: [[u, v], [u, v]]}}


def _perimeter_point(s: float, w: float, h: float) -> np.ndarray:
    s %= 2 * (w + h)
    if s < w:
        return np.array([s, 0.0])
    s -= w
    if s < h:
        return np.array([w, s])
    s -= h
    if s < w:
        return np.array([w - s, h])
    return np.array([0.0, h - (s - w)])


def _place_cameras(spec: SceneSpec, rng: np.random.Generator):
    w, h = spec.extent
    perimeter = 2 * (w + h)
    start = rng.uniform(0, 0.05 * perimeter)
    center = np.array([w / 2, h / 2])
    width, height = spec.image_size
    poses, intr = {}, {}
    for c in range(spec.n_cameras):
        s = start + c * perimeter / spec.n_cameras + rng.uniform(-0.03, 0.03) * perimeter
        xy = _perimeter_point(s, w, h)
        out = xy - center
        # push outward so nobody walks into the camera
        xy = xy + spec.camera_margin * out / np.linalg.norm(out)
        z = rng.uniform(*spec.camera_height)
        target = np.r_[center + rng.uniform(-1.0, 1.0, 2), rng.uniform(0.5, 1.5)]
        poses[c] = look_at(np.r_[xy, z], target)
        f = spec.focal_length * rng.uniform(0.97, 1.03)
        intr[c] = CameraIntrinsics(
            fx=f,
            fy=f * rng.uniform(0.995, 1.005),
            cx=width / 2 + rng.uniform(-10, 10),
            cy=height / 2 + rng.uniform(-10, 10),
            width=width,
            height=height,
            dist=np.asarray(spec.distortion, dtype=float),
        )
    return poses, intr


def _walk(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    """Smoothed random walks, reflected at the area boundary."""
    w, h = spec.extent
    margin = 0.5
    lo, hi = np.array([margin, margin]), np.array([w - margin, h - margin])
    out = np.zeros((spec.n_people, spec.n_frames, 2))
    dt = 1.0 / spec.fps
    for p in range(spec.n_people):
        pos = rng.uniform(lo, hi)
        heading = rng.uniform(0, 2 * math.pi)
        turn = 0.0
        speed = spec.walk_speed * rng.uniform(0.7, 1.3)
        for f in range(spec.n_frames):
            out[p, f] = pos
            turn = 0.95 * turn + rng.normal(0, 0.25)  # rad/s, low-pass filtered
            heading += turn * dt
            step = speed * dt * np.array([math.cos(heading), math.sin(heading)])
            nxt = pos + step
            for k in range(2):
                if nxt[k] < lo[k] or nxt[k] > hi[k]:
                    step[k] = -step[k]
                    heading = math.atan2(step[1], step[0])
            pos = np.clip(pos + step, lo, hi)
    return out


def generate_scene(spec: SceneSpec) -> GroundTruth:
    """Ground-truth cameras and person trajectories, deterministic per seed."""
    rng = np.random.default_rng([spec.seed, 1])
    poses, intr = _place_cameras(spec, rng)
    ground = _walk(spec, rng)
    heights = spec.body_height + rng.uniform(-spec.height_jitter, spec.height_jitter, spec.n_people)
    t = np.arange(spec.n_frames) / spec.fps
    phase = rng.uniform(0, 2 * math.pi, spec.n_people)
    bob = 0.03 * np.sin(2 * math.pi * 1.8 * t[None, :] + phase[:, None])
    z = spec.body_mass_fraction * heights[:, None] + bob
    body = np.concatenate([ground, z[:, :, None]], axis=2)
    gt = GroundTruth(poses, intr, ground, heights, body)
    gt.prior_segments = _prior_segments(spec, gt, rng)
    return gt


def _visible(gt: GroundTruth, cam: int, pts: np.ndarray, min_depth: float = 1.0) -> np.ndarray:
    k = gt.intrinsics[cam]
    uv, z = project_points(pts, gt.poses[cam], k)
    with np.errstate(invalid="ignore"):
        inside = (uv[:, 0] >= 0) & (uv[:, 0] < k.width) & (uv[:, 1] >= 0) & (uv[:, 1] < k.height)
    return inside & (z > min_depth)


def _prior_segments(spec: SceneSpec, gt: GroundTruth, rng) -> list[PriorSegment]:
    """Vertical person segments (feet to head) visible in every camera."""
    segments = []
    tries = 0
    while len(segments) < spec.n_prior_segments and tries < 2000:
        tries += 1
        p = int(rng.integers(spec.n_people))
        f = int(rng.integers(spec.n_frames))
        foot = np.r_[gt.ground[p, f], 0.0]
        head = np.r_[gt.ground[p, f], gt.heights[p]]
        ends = np.vstack([foot, head])
        if all(_visible(gt, c, ends).all() for c in gt.poses):
            segments.append(PriorSegment(p, f, foot, head))
    if len(segments) < spec.n_prior_segments:
        log.warning("only %d prior segments visible in all cameras", len(segments))
    return segments


def _disc(rng, radius: float, n: int) -> np.ndarray:
    r = radius * np.sqrt(rng.uniform(0, 1, n))
    a = rng.uniform(0, 2 * math.pi, n)
    return np.stack([r * np.cos(a), r * np.sin(a)], axis=1)


def render_observations(gt: GroundTruth, spec: SceneSpec) -> RenderedData:
    """Per-camera tracklets with embeddings, annotated pairs and prior observations."""
    rng = np.random.default_rng([spec.seed, 2])
    n_p, n_f = spec.n_people, spec.n_frames
    means = rng.normal(size=(n_p, spec.embedding_dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)

    tracklets: dict[int, list[Tracklet]] = {}
    identity: dict[int, dict[int, int]] = {}
    for c in sorted(gt.poses):
        crng = np.random.default_rng([spec.seed, 3, c])
        k = gt.intrinsics[c]
        track_ids = crng.permutation(n_p) + 1
        cam_means = means.copy()
        if c != 0 and spec.wrong_association_fraction > 0:
            n_swap = int(round(spec.wrong_association_fraction * n_p / 2))
            order = crng.permutation(n_p)
            for s in range(n_swap):
                g1, g2 = order[2 * s], order[2 * s + 1]
                cam_means[[g1, g2]] = cam_means[[g2, g1]]
        identity[c] = {}
        tracks = []
        for p in range(n_p):
            body = gt.body_mass[p]
            heads = np.concatenate([gt.ground[p], np.full((n_f, 1), gt.heights[p])], axis=1)
            feet = np.concatenate([gt.ground[p], np.zeros((n_f, 1))], axis=1)
            vis = _visible(gt, c, body)
            frames = np.flatnonzero(vis)
            if len(frames) == 0:
                continue
            center, _ = project_points(body[frames], gt.poses[c], k)
            top, _ = project_points(heads[frames], gt.poses[c], k)
            bottom, _ = project_points(feet[frames], gt.poses[c], k)
            m = len(frames)
            center = center + _disc(crng, spec.center_offset_radius, m) if spec.center_offset_radius > 0 else center
            if spec.center_bias_radius > 0:
                center = center + _disc(crng, spec.center_bias_radius, 1)
            if spec.pixel_noise_sigma > 0:
                center = center + crng.normal(0, spec.pixel_noise_sigma, (m, 2))
            box_h = np.abs(bottom[:, 1] - top[:, 1]) * crng.uniform(1.0, 1.15, m) + 4.0
            box_w = box_h * 0.4 * crng.uniform(0.85, 1.15, m)
            tid = int(track_ids[p])
            boxes = [
                BBox(
                    float(center[i, 0] - box_w[i] / 2),
                    float(center[i, 1] - box_h[i] / 2),
                    float(center[i, 0] + box_w[i] / 2),
                    float(center[i, 1] + box_h[i] / 2),
                    int(frames[i]),
                    tid,
                    c,
                )
                for i in range(m)
            ]
            emb = cam_means[p] + crng.normal(0, spec.embedding_noise, (m, spec.embedding_dim))
            tracks.append(Tracklet(c, tid, boxes, emb))
            identity[c][tid] = p
        if not tracks:
            log.warning("camera %d sees nobody", c)
        tracklets[c] = sorted(tracks, key=lambda t: t.person_id)

    for p in range(n_p):
        if not any(p in identity[c].values() for c in identity):
            log.warning("person %d is outside every camera frustum; dropped", p)

    annotated = _annotated_pairs(gt, spec, rng)
    priors = []
    for seg in gt.prior_segments:
        obs = {}
        for c in sorted(gt.poses):
            uv, _ = project_points(np.vstack([seg.foot, seg.head]), gt.poses[c], gt.intrinsics[c])
            obs[c] = uv.tolist()
        priors.append({"length": seg.length, "observations": obs})
    return RenderedData(tracklets, identity, annotated, priors)


def _annotated_pairs(gt: GroundTruth, spec: SceneSpec, rng) -> dict:
    w, h = spec.extent
    cams = sorted(gt.poses)
    out = {}
    for i in cams:
        for j in cams:
            if j <= i:
                continue
            pairs = []
            tries = 0
            while len(pairs) < spec.n_annotated and tries < 10000:
                tries += 1
                X = np.array([rng.uniform(0, w), rng.uniform(0, h), rng.uniform(0, 2.5)])
                if not (_visible(gt, i, X[None])[0] and _visible(gt, j, X[None])[0]):
                    continue
                ui, _ = project_points(X, gt.poses[i], gt.intrinsics[i])
                uj, _ = project_points(X, gt.poses[j], gt.intrinsics[j])
                pairs.append((tuple(ui[0].tolist()), tuple(uj[0].tolist())))
            out[(i, j)] = pairs
    return out


def spec_from_dict(d) -> SceneSpec:
    d = dict(d)
    for key in ("extent", "camera_height", "image_size", "distortion"):
        if key in d:
            d[key] = tuple(d[key])
    try:
        return SceneSpec(**d)
    except TypeError as exc:
        raise ConfigError(f"invalid scene description: {exc}") from exc


def export_dataset(spec: SceneSpec, out_dir, ransac_threshold_px: float = 5.0) -> Path:
    """Write a complete synthetic dataset plus a ready-to-run ``config.json``.

    Returns the config path.  The RANSAC threshold is set to the epipolar
    tolerance used for correspondence checks, since synthetic boxes carry
    several pixels of center noise.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gt = generate_scene(spec)
    data = render_observations(gt, spec)
    io.write_intrinsics(out / "intrinsics.json", gt.intrinsics)
    for c, tracks in data.tracklets.items():
        io.write_tracks(out / f"tracks_cam{c}.csv", tracks)
    io.write_embeddings(out / "embeddings.csv", data.tracklets)
    io.write_poses(out / "gt_poses.json", gt.poses)
    io.write_annotated(out / "annotated.json", data.annotated)
    truth = {
        "identity": {str(c): {str(t): int(p) for t, p in ids.items()} for c, ids in data.identity.items()},
        "body_mass": gt.body_mass.tolist(),
    }
    io.atomic_write_text(out / "truth.json", json.dumps(truth))
    config = {
        "reference_camera": 0,
        "intrinsics": "intrinsics.json",
        "tracks": {str(c): f"tracks_cam{c}.csv" for c in sorted(data.tracklets)},
        "embeddings": "embeddings.csv",
        "scale_priors": data.priors,
        "ground_truth": "gt_poses.json",
        "annotated_pairs": "annotated.json",
        "settings": {"seed": spec.seed, "ransac": {"threshold_px": ransac_threshold_px}},
        "scene": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(spec).items()},
    }
    path = out / "config.json"
    io.atomic_write_text(path, json.dumps(config, indent=2))
    return path


def calibration_inputs(gt: GroundTruth, data: RenderedData):
    """Pipeline inputs for a rendered scene: tracks, true intrinsics and the priors."""
    from .pipeline import CalibrationInputs, PriorObservation

    priors = [
        PriorObservation(p["length"], {c: (tuple(v[0]), tuple(v[1])) for c, v in p["observations"].items()})
        for p in data.priors
    ]
    return CalibrationInputs(data.tracklets, dict(gt.intrinsics), priors)
