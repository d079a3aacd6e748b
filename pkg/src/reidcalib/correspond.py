"""Box correspondences to point correspondences, aggregated over time."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .assoc import Assignment, BBox, Tracklet
from .errors import EmptyCorrespondenceError
from .geometry import CorrespondenceSet, PointPair

DEFAULT_FRAME_STRIDE = 25
DEFAULT_MIN_MOTION_PX = 2.0


def bbox_center(b: BBox) -> tuple[float, float]:
    """Geometric center of the box, used as the body-mass proxy."""
    return ((b.u_tl + b.u_br) / 2.0, (b.v_tl + b.v_br) / 2.0)


def _thin_static(frames, ca, cb, min_motion):
    """Keep frames where either endpoint moved >= min_motion px since the last kept one."""
    if min_motion <= 0 or not frames:
        return list(range(len(frames)))
    keep = [0]
    la, lb = ca[0], cb[0]
    for k in range(1, len(frames)):
        da = np.hypot(ca[k][0] - la[0], ca[k][1] - la[1])
        db = np.hypot(cb[k][0] - lb[0], cb[k][1] - lb[1])
        if da >= min_motion or db >= min_motion:
            keep.append(k)
            la, lb = ca[k], cb[k]
    return keep


def extract_correspondences(
    assignment: Assignment,
    tracklets_a: Sequence[Tracklet],
    tracklets_b: Sequence[Tracklet],
    frame_stride: int = DEFAULT_FRAME_STRIDE,
    min_motion_px: float = DEFAULT_MIN_MOTION_PX,
    cam_a: int | None = None,
    cam_b: int | None = None,
) -> CorrespondenceSet:
    """Turn matched tracklets into center-to-center point pairs.

    For every match the frames present in both tracklets are collected,
    near-static stretches are collapsed (neither center moved ``min_motion_px``
    since the previously kept frame), and every ``frame_stride``-th remaining
    frame is emitted.  Output is ordered by (person id in A, frame).

    Raises:
        EmptyCorrespondenceError: no matched pair shares a frame.
    """
    if frame_stride < 1:
        raise ValueError("frame_stride must be >= 1")
    if cam_a is None:
        cam_a = tracklets_a[0].camera_id if tracklets_a else 0
    if cam_b is None:
        cam_b = tracklets_b[0].camera_id if tracklets_b else 1
    pairs: list[PointPair] = []
    for ia, ib in sorted(assignment.matches, key=lambda m: (tracklets_a[m[0]].person_id, m[1])):
        ta, tb = tracklets_a[ia], tracklets_b[ib]
        frames = sorted(set(ta.frames) & set(tb.frames))
        ca = [bbox_center(ta.box_at(f)) for f in frames]
        cb = [bbox_center(tb.box_at(f)) for f in frames]
        kept = _thin_static(frames, ca, cb, min_motion_px)[::frame_stride]
        pairs.extend(PointPair(ca[k], cb[k], frames[k], ta.person_id) for k in kept)
    if not pairs:
        raise EmptyCorrespondenceError(f"cameras ({cam_a}, {cam_b}): matched people share no frames")
    return CorrespondenceSet(cam_a, cam_b, pairs)


def inject_bbox_noise(b: BBox, n: float, seed=None) -> BBox:
    """Shift every corner coordinate by independent uniform noise in [-n, n].

    Crossed coordinates are swapped back so the box stays well formed.
    """
    if n < 0:
        raise ValueError("noise level must be nonnegative")
    if n == 0:
        return b
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u1, v1, u2, v2 = np.asarray(b.corners) + rng.uniform(-n, n, size=4)
    if u1 == u2 or v1 == v2:
        return b
    return BBox(min(u1, u2), min(v1, v2), max(u1, u2), max(v1, v2), b.frame, b.person_id, b.camera_id)


def noisy_tracklets(tracklets: Sequence[Tracklet], n: float, seed: int = 0) -> list[Tracklet]:
    """Copy of ``tracklets`` with :func:`inject_bbox_noise` applied to every box."""
    if n == 0:
        return list(tracklets)
    out = []
    for t in tracklets:
        rng = np.random.default_rng([seed, t.camera_id & 0xFFFFFFFF, t.person_id & 0xFFFFFFFF])
        boxes = [inject_bbox_noise(b, n, rng) for b in t.boxes]
        out.append(Tracklet(t.camera_id, t.person_id, boxes, t.embeddings))
    return out
