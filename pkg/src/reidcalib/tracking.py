"""3D body-mass trajectories from calibrated cameras."""

from __future__ import annotations

import itertools
import logging
from typing import Mapping, Sequence

import numpy as np

from . import io
from .assoc import Tracklet
from .correspond import bbox_center
from .geometry import TRI_BEHIND, CameraIntrinsics, triangulate_points, undistort_points

log = logging.getLogger(__name__)


def _person_tracks(result, person_id: int, tracks: Mapping[int, Sequence[Tracklet]]) -> dict[int, Tracklet]:
    """The tracklet of ``person_id`` (a reference-camera id) in every camera it was matched to."""
    ref = result.reference
    wanted = {ref: person_id}
    for c, pair in result.pairs.items():
        if person_id in pair.association and person_id in verified_people(pair):
            wanted[c] = pair.association[person_id]
    out = {}
    for c, pid in wanted.items():
        for t in tracks.get(c, ()):
            if t.person_id == pid:
                out[c] = t
    return out


def verified_people(pair) -> set[int]:
    """Reference person ids that kept at least one inlier after verification."""
    return {q.person_id for q, ok in zip(pair.correspondences.pairs, pair.inliers) if ok}


def track_person(
    result,
    person_id: int,
    tracks: Mapping[int, Sequence[Tracklet]],
    intrinsics: Mapping[int, CameraIntrinsics],
) -> np.ndarray:
    """Per-frame body-mass position of one person, averaged over camera pairs.

    Returns an (F, 4) array of ``frame, x, y, z`` in the reference frame.
    Frames with fewer than two views, or where every pair triangulates
    behind a camera, are skipped and counted in the log.
    """
    per_cam = _person_tracks(result, person_id, tracks)
    frames = sorted({f for t in per_cam.values() for f in t.frames})
    rows, skipped = [], 0
    # batch per camera pair, then average per frame
    sums = {f: np.zeros(3) for f in frames}
    counts = dict.fromkeys(frames, 0)
    for ci, cj in itertools.combinations(sorted(per_cam), 2):
        ti, tj = per_cam[ci], per_cam[cj]
        common = sorted(set(ti.frames) & set(tj.frames))
        if not common:
            continue
        ui = np.array([bbox_center(ti.box_at(f)) for f in common])
        uj = np.array([bbox_center(tj.box_at(f)) for f in common])
        ni, ok_i = undistort_points(ui, intrinsics[ci])
        nj, ok_j = undistort_points(uj, intrinsics[cj])
        X, status = triangulate_points(ni, nj, result.poses[cj], result.poses[ci])
        good = ok_i & ok_j & (status != TRI_BEHIND)
        for f, x, g in zip(common, X, good):
            if g:
                sums[f] += x
                counts[f] += 1
    for f in frames:
        if counts[f] == 0:
            skipped += 1
            continue
        rows.append([f, *(sums[f] / counts[f])])
    if skipped:
        log.info("person %d: %d frames with fewer than two usable views skipped", person_id, skipped)
    return np.array(rows, dtype=float).reshape(-1, 4)


def write_trajectory(path, trajectory: np.ndarray) -> None:
    rows = [(int(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in trajectory]
    io.write_rows(path, ["frame", "x", "y", "z"], rows)


def trajectory_rmse(trajectory: np.ndarray, truth: Mapping[int, np.ndarray]) -> float:
    """RMS 3D distance to ``truth[frame]`` over the frames present in both."""
    d = [np.linalg.norm(r[1:] - truth[int(r[0])]) for r in trajectory if int(r[0]) in truth]
    return float(np.sqrt(np.mean(np.square(d)))) if d else float("nan")


def ground_frame(points) -> tuple[np.ndarray, np.ndarray]:
    """Origin and two in-plane axes of the plane best fitting ``points``.

    Walking people keep their body mass near one horizontal plane, so this
    recovers a bird's-eye frame without knowing where the ground is.
    """
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(p) < 3:
        raise ValueError("need at least 3 points to fit a ground plane")
    origin = p.mean(axis=0)
    _, _, Vt = np.linalg.svd(p - origin)
    return origin, Vt[:2]


def birdseye(trajectory: np.ndarray, frame: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    """Project ``frame, x, y, z`` rows onto the ground frame; returns ``frame, u, v``."""
    origin, axes = frame
    uv = (trajectory[:, 1:4] - origin) @ axes.T
    return np.hstack([trajectory[:, :1], uv])
