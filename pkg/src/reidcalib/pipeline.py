"""End-to-end calibration: association, correspondences, pairwise poses, global BA."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import io
from .assoc import Tracklet, match_across_cameras
from .correspond import extract_correspondences, noisy_tracklets
from .errors import CalibrationError, ConfigError, DegeneratePriorError
from .geometry import (
    TRI_OK,
    CameraIntrinsics,
    CorrespondenceSet,
    PointPair,
    PoseSE3,
    RansacConfig,
    decompose_essential,
    project_points,
    ransac_essential,
    triangulate_points,
    undistort_points,
)
from .optim import LMConfig, ScalePrior, global_ba, local_ba, merge_3d_points, resolve_scale

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Settings:
    reference: int = 0
    seed: int = 0
    samples_per_tracklet: int = 8
    max_cost: float | None = None
    frame_stride: int = 25
    min_motion_px: float = 2.0
    ransac: RansacConfig = RansacConfig(solver="5point")
    lm: LMConfig = LMConfig()
    # a tracklet pair whose inlier fraction falls below this multiple of the
    # median fraction is taken as a wrong association and dropped as a whole
    min_track_inlier_ratio: float = 0.5
    # study hooks: uniform corner noise in px, and a cap on pairs per camera pair
    box_noise: float = 0.0
    max_correspondences: int | None = None
    workers: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "Settings":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown settings: {sorted(unknown)}")
        try:
            if "ransac" in d:
                d["ransac"] = replace(cls.ransac, **d["ransac"])
            if "lm" in d:
                d["lm"] = replace(cls.lm, **d["lm"])
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid settings: {exc}") from exc


@dataclass(frozen=True)
class PriorObservation:
    """A segment of known length seen in several cameras (pixel endpoints)."""

    length: float
    observations: Mapping[int, tuple[tuple[float, float], tuple[float, float]]]


@dataclass
class CalibrationInputs:
    tracklets: dict[int, list[Tracklet]]
    intrinsics: dict[int, CameraIntrinsics]
    priors: list[PriorObservation] = field(default_factory=list)


@dataclass
class PairResult:
    camera: int
    association: dict[int, int]  # reference person id -> this camera's person id
    correspondences: CorrespondenceSet
    inliers: np.ndarray  # RANSAC inlier mask over correspondences
    used: np.ndarray  # inliers that were triangulated and refined
    pose: PoseSE3  # metric, reference -> camera
    points: dict  # (person_id, frame) -> xyz in the reference frame
    scale: float
    rms_before: float
    rms_after: float
    cost_trace: list[float]
    prior_points: dict = field(default_factory=dict)  # (prior index, endpoint) -> xyz


@dataclass
class CalibrationResult:
    reference: int
    poses: dict[int, PoseSE3]
    points: dict
    pairs: dict[int, PairResult]
    global_trace: list[float]
    global_rms: float
    settings: Settings

    @property
    def associations(self) -> dict[int, dict[int, int]]:
        return {c: p.association for c, p in self.pairs.items()}

    def to_json(self) -> dict:
        pairs = {}
        for c in sorted(self.pairs):
            p = self.pairs[c]
            pairs[str(c)] = {
                "association": {str(k): v for k, v in sorted(p.association.items())},
                "correspondences": [
                    [q.person_id, q.frame, q.a[0], q.a[1], q.b[0], q.b[1]] for q in p.correspondences.pairs
                ],
                "inliers": [bool(x) for x in p.inliers],
                "used": [bool(x) for x in p.used],
                "scale": p.scale,
                "rms_local_before_px": p.rms_before,
                "rms_local_after_px": p.rms_after,
                "cost_trace": [float(x) for x in p.cost_trace],
            }
        return {
            "reference": self.reference,
            "seed": self.settings.seed,
            "poses": io.poses_to_json(self.poses),
            "points": [
                {"person_id": int(k[0]), "frame": int(k[1]), "xyz": [float(x) for x in self.points[k]]}
                for k in sorted(self.points)
            ],
            "pairs": pairs,
            "global": {"rms_px": self.global_rms, "cost_trace": [float(x) for x in self.global_trace]},
            "settings": self.settings.to_dict(),
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "CalibrationResult":
        settings = Settings.from_dict(data["settings"])
        ref = int(data["reference"])
        pairs = {}
        for c, p in data.get("pairs", {}).items():
            c = int(c)
            corr = CorrespondenceSet(
                ref, c, [PointPair((r[2], r[3]), (r[4], r[5]), int(r[1]), int(r[0])) for r in p["correspondences"]]
            )
            pairs[c] = PairResult(
                camera=c,
                association={int(k): int(v) for k, v in p["association"].items()},
                correspondences=corr,
                inliers=np.array(p["inliers"], dtype=bool),
                used=np.array(p["used"], dtype=bool),
                pose=io.poses_from_json(data["poses"])[c],
                points={},
                scale=p["scale"],
                rms_before=p["rms_local_before_px"],
                rms_after=p["rms_local_after_px"],
                cost_trace=p["cost_trace"],
            )
        return cls(
            reference=ref,
            poses=io.poses_from_json(data["poses"]),
            points={(d["person_id"], d["frame"]): np.array(d["xyz"]) for d in data["points"]},
            pairs=pairs,
            global_trace=data["global"]["cost_trace"],
            global_rms=data["global"]["rms_px"],
            settings=settings,
        )

    def save(self, path) -> None:
        io.atomic_write_text(path, json.dumps(self.to_json(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "CalibrationResult":
        return cls.from_json(json.loads(Path(path).read_text()))


class PairFailure(CalibrationError):
    """One or more camera pairs could not be solved; ``failures`` maps camera to cause."""

    def __init__(self, reference: int, failures: Mapping[int, Exception]):
        self.reference = reference
        self.failures = dict(failures)
        lines = [
            f"pair (camera {c}, reference {reference}): {type(e).__name__}: {e}" for c, e in sorted(self.failures.items())
        ]
        super().__init__("\n".join(lines))


def _rms(problem_pixels, projected) -> float:
    r = projected - problem_pixels
    return float(np.sqrt(np.mean(np.sum(r * r, axis=1)))) if len(r) else 0.0


def _pair_rms(pose: PoseSE3, points, a_px, b_px, k_a, k_b) -> float:
    pa, _ = project_points(points, PoseSE3.identity(), k_a)
    pb, _ = project_points(points, pose, k_b)
    return _rms(np.vstack([a_px, b_px]), np.vstack([pa, pb]))


def solve_pair(
    ref_tracks: Sequence[Tracklet],
    cam_tracks: Sequence[Tracklet],
    k_ref: CameraIntrinsics,
    k_cam: CameraIntrinsics,
    priors: Sequence[PriorObservation],
    settings: Settings,
    camera: int,
) -> PairResult:
    """Pairwise stage for (reference, camera): up to the metric-scaled local BA."""
    ref = settings.reference
    assignment = match_across_cameras(
        ref_tracks, cam_tracks, settings.max_cost, settings.samples_per_tracklet, settings.seed
    )
    association = {ref_tracks[i].person_id: cam_tracks[j].person_id for i, j in assignment.matches}
    corr = extract_correspondences(
        assignment, ref_tracks, cam_tracks, settings.frame_stride, settings.min_motion_px, ref, camera
    )
    if settings.max_correspondences is not None:
        order = sorted(range(len(corr)), key=lambda k: (corr.pairs[k].frame, corr.pairs[k].person_id))
        corr = CorrespondenceSet(ref, camera, [corr.pairs[k] for k in sorted(order[: settings.max_correspondences])])

    ransac_cfg = replace(settings.ransac, seed=settings.seed * 7919 + camera)
    anchor_pairs = [
        (np.asarray(p.observations[ref], dtype=float), np.asarray(p.observations[camera], dtype=float))
        for p in priors
        if ref in p.observations and camera in p.observations
    ]
    anchors = (
        (np.vstack([x[0] for x in anchor_pairs]), np.vstack([x[1] for x in anchor_pairs])) if anchor_pairs else None
    )
    E, inliers = ransac_essential(corr, k_ref, k_cam, ransac_cfg, anchors)
    inliers = verify_tracks(corr, inliers, settings.min_track_inlier_ratio)
    a_n, _ = undistort_points(corr.a, k_ref)
    b_n, _ = undistort_points(corr.b, k_cam)
    pose0 = decompose_essential(E, a_n[inliers], b_n[inliers])
    X, status = triangulate_points(a_n, b_n, pose0)
    used = inliers & (status == TRI_OK)
    idx = np.flatnonzero(used)
    if len(idx) < 8:
        raise DegeneratePriorError(f"only {len(idx)} triangulable inliers")

    # prior segments seen by both cameras become extra (exact) point pairs
    extra_pairs, extra_pts, prior_defs = [], [], []
    prior_keys = []
    for n_prior, prior in enumerate(priors):
        if ref not in prior.observations or camera not in prior.observations:
            continue
        pa = np.asarray(prior.observations[ref], dtype=float)
        pb = np.asarray(prior.observations[camera], dtype=float)
        na, ok_a = undistort_points(pa, k_ref)
        nb, ok_b = undistort_points(pb, k_cam)
        Xp, st = triangulate_points(na, nb, pose0)
        if not (ok_a.all() and ok_b.all() and np.all(st == TRI_OK)):
            continue
        base = len(idx) + len(extra_pts)
        prior_defs.append(ScalePrior(base, base + 1, prior.length))
        prior_keys.append(n_prior)
        extra_pts.extend(Xp)
        extra_pairs.extend(PointPair(tuple(pa[e]), tuple(pb[e])) for e in range(2))
    if not prior_defs:
        raise DegeneratePriorError("no scale prior is visible in both cameras")

    ba_set = CorrespondenceSet(ref, camera, [corr.pairs[k] for k in idx] + extra_pairs)
    pts0 = np.vstack([X[idx]] + ([np.asarray(extra_pts)] if extra_pts else []))
    rms_before = _pair_rms(pose0, pts0, ba_set.a, ba_set.b, k_ref, k_cam)
    pose1, pts1, trace = local_ba(ba_set, pose0, pts0, k_ref, k_cam, settings.lm)
    rms_after = _pair_rms(pose1, pts1, ba_set.a, ba_set.b, k_ref, k_cam)
    pose2, pts2 = resolve_scale(pose1, pts1, prior_defs)
    scale = float(np.linalg.norm(pose2.translation))
    points = {(corr.pairs[k].person_id, corr.pairs[k].frame): pts2[n] for n, k in enumerate(idx)}
    prior_points = {}
    for q, d in zip(prior_keys, prior_defs):
        prior_points[(q, 0)] = pts2[d.point_a]
        prior_points[(q, 1)] = pts2[d.point_b]
    return PairResult(
        camera, association, corr, inliers, used, pose2, points, scale, rms_before, rms_after, trace, prior_points
    )


def verify_tracks(corr: CorrespondenceSet, inliers: np.ndarray, min_ratio: float) -> np.ndarray:
    """Geometric check of the associations.

    Correct tracklet pairs share roughly the same inlier fraction (set by the
    noise level), wrong ones only hit the epipolar band by chance.  Every
    person whose fraction is below ``min_ratio`` times the median fraction
    loses all of its inlier flags.
    """
    inliers = np.asarray(inliers, dtype=bool).copy()
    if min_ratio <= 0:
        return inliers
    pids = np.array([q.person_id for q in corr.pairs])
    people = np.unique(pids)
    ratios = np.array([inliers[pids == pid].mean() for pid in people])
    cutoff = min_ratio * float(np.median(ratios))
    for pid, r in zip(people, ratios):
        if r < cutoff:
            log.info("camera %s: person %d rejected (%.0f%% inliers)", corr.cam_b, pid, 100 * r)
            inliers[pids == pid] = False
    return inliers


def calibrate(inputs: CalibrationInputs, settings: Settings = Settings()) -> CalibrationResult:
    """Estimate all camera poses relative to ``settings.reference``.

    Raises:
        PairFailure: a camera pair could not be solved; the message names the
            pair and the failing stage.
    """
    ref = settings.reference
    if ref not in inputs.tracklets or ref not in inputs.intrinsics:
        raise ConfigError(f"reference camera {ref} has no tracks or intrinsics")
    tracks = inputs.tracklets
    if settings.box_noise > 0:
        tracks = {c: noisy_tracklets(t, settings.box_noise, settings.seed) for c, t in tracks.items()}
    others = sorted(c for c in tracks if c != ref)
    for c in others:
        if c not in inputs.intrinsics:
            raise ConfigError(f"camera {c} has no intrinsics")

    def run(c):
        try:
            return solve_pair(tracks[ref], tracks[c], inputs.intrinsics[ref], inputs.intrinsics[c],
                              inputs.priors, settings, c)
        except CalibrationError as exc:
            return exc

    if settings.workers > 1:
        with ThreadPoolExecutor(settings.workers) as ex:
            results = list(ex.map(run, others))
    else:
        results = [run(c) for c in others]
    failures = {c: r for c, r in zip(others, results) if isinstance(r, Exception)}
    if failures:
        raise PairFailure(ref, failures)
    pairs = dict(zip(others, results))

    merged = merge_3d_points({(ref, c): p.points for c, p in pairs.items()})
    obs = {}
    for c, p in pairs.items():
        for k in np.flatnonzero(p.used):
            q = p.correspondences.pairs[k]
            key = (q.person_id, q.frame)
            obs[(ref, key)] = (ref, key, q.a, q.weight)
            obs[(c, key)] = (c, key, q.b, q.weight)
    # prior endpoints join the global problem under negative keys
    prior_merged = merge_3d_points(
        {(ref, c): {(-1 - q, e): x for (q, e), x in p.prior_points.items()} for c, p in pairs.items()}
    )
    prior_obs = [
        (c, (-1 - q, e), inputs.priors[q].observations[c][e], 1.0)
        for (q, e) in sorted((-1 - k[0], k[1]) for k in prior_merged)
        for c in sorted(inputs.priors[q].observations)
        if c == ref or c in pairs
    ]
    poses0 = {ref: PoseSE3.identity(), **{c: p.pose for c, p in pairs.items()}}
    if others:
        res = global_ba(
            poses0, {**merged, **prior_merged}, list(obs.values()) + prior_obs, inputs.intrinsics,
            settings.lm, reference=ref,
        )
        poses, points, trace = res.poses, res.points, res.cost_trace
        poses, points = _rescale(poses, points, inputs.priors)
    else:
        poses, points, trace = poses0, {}, []
    points = {k: v for k, v in points.items() if k[0] >= 0}
    global_rms = _global_rms(poses, points, obs.values(), inputs.intrinsics)
    return CalibrationResult(ref, poses, points, pairs, trace, global_rms, settings)


def _rescale(poses, points, priors):
    """Apply the metric scale implied by the priors after global refinement."""
    factors = []
    for q, prior in enumerate(priors):
        a, b = points.get((-1 - q, 0)), points.get((-1 - q, 1))
        if a is None or b is None:
            continue
        d = float(np.linalg.norm(a - b))
        if d > 1e-12:
            factors.append(prior.length / d)
    if not factors:
        return poses, points
    s = float(np.mean(factors))
    poses = {c: p.with_scale(s) for c, p in poses.items()}
    return poses, {k: v * s for k, v in points.items()}


def _global_rms(poses, points, observations, intrinsics) -> float:
    sq = []
    for cam, key, px, _ in observations:
        if key not in points:
            continue
        uv, _ = project_points(points[key], poses[cam], intrinsics[cam])
        sq.append(float(np.sum((uv[0] - np.asarray(px)) ** 2)))
    return float(np.sqrt(np.mean(sq))) if sq else 0.0


# -- configuration files ----------------------------------------------------------


def _resolve(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def load_config(path) -> dict:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    cfg["_base"] = str(path.parent)
    return cfg


def settings_from_config(cfg: Mapping, seed: int | None = None) -> Settings:
    s = dict(cfg.get("settings", {}))
    if "reference_camera" in cfg:
        s["reference"] = int(cfg["reference_camera"])
    if seed is not None:
        s["seed"] = int(seed)
    return Settings.from_dict(s)


def inputs_from_config(cfg: Mapping) -> CalibrationInputs:
    base = Path(cfg.get("_base", "."))
    for key in ("intrinsics", "tracks"):
        if key not in cfg:
            raise ConfigError(f"config lacks '{key}'")
    intrinsics = io.read_intrinsics(_resolve(base, cfg["intrinsics"]))
    table = io.read_embeddings(_resolve(base, cfg["embeddings"])) if cfg.get("embeddings") else {}
    tracklets = {}
    for cam, p in cfg["tracks"].items():
        t = io.read_tracks(_resolve(base, p), int(cam))
        tracklets[int(cam)] = io.attach_embeddings(t, table)
    priors = []
    for d in cfg.get("scale_priors", []):
        try:
            obs = {int(c): (tuple(v[0]), tuple(v[1])) for c, v in d["observations"].items()}
            priors.append(PriorObservation(float(d["length"]), obs))
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed scale prior {d}: {exc}") from exc
    return CalibrationInputs(tracklets, intrinsics, priors)


def calibrate_from_config(path, seed: int | None = None) -> CalibrationResult:
    cfg = load_config(path)
    return calibrate(inputs_from_config(cfg), settings_from_config(cfg, seed))
