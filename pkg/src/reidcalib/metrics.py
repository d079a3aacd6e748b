"""Evaluation against ground truth: pose errors, reprojection error, association quality."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .geometry import (
    TRI_BEHIND,
    CameraIntrinsics,
    PoseSE3,
    project_points,
    rotation_angle,
    triangulate_points,
    undistort_points,
)

log = logging.getLogger(__name__)


def rebase(poses: Mapping[int, PoseSE3], reference: int) -> dict[int, PoseSE3]:
    """Express world->camera poses relative to camera ``reference``."""
    inv = poses[reference].inverse()
    return {c: p.compose(inv) for c, p in poses.items()}


def camera_pose_error(
    est: Mapping[int, PoseSE3], gt: Mapping[int, PoseSE3], reference: int | None = None
) -> dict[int, tuple[float, float]]:
    """Per camera ``(center distance in mm, geodesic rotation error in degrees)``.

    If ``reference`` is given, ``gt`` is rebased onto that camera first;
    otherwise both sets must already share a frame.  Estimated poses without
    metric scale are compared as they are.
    """
    if set(est) != set(gt):
        raise ValueError(f"camera ids differ: {sorted(est)} vs {sorted(gt)}")
    if reference is not None:
        gt = rebase(gt, reference)
    out = {}
    for c in sorted(est):
        d = np.linalg.norm(est[c].center - gt[c].center) * 1000.0
        ang = math.degrees(rotation_angle(est[c].rotation @ gt[c].rotation.T))
        out[c] = (float(d), float(ang))
    return out


def mean_pose_error(errors: Mapping[int, tuple[float, float]], skip: Sequence[int] = ()) -> tuple[float, float]:
    vals = [v for c, v in errors.items() if c not in skip]
    if not vals:
        return (0.0, 0.0)
    return (float(np.mean([v[0] for v in vals])), float(np.mean([v[1] for v in vals])))


@dataclass
class RPEReport:
    rpe: float
    per_pair: dict[tuple[int, int], float]
    excluded: int


def reprojection_error_metric(
    poses: Mapping[int, PoseSE3],
    annotated: Mapping[tuple[int, int], Sequence],
    intrinsics: Mapping[int, CameraIntrinsics],
) -> RPEReport:
    """Triangulate every annotated pair with the estimated poses and reproject.

    RPE is the mean pixel distance over all pairs and both views.  Pairs that
    land behind a camera are excluded and counted.
    """
    dists, per_pair, excluded = [], {}, 0
    for (i, j), pairs in sorted(annotated.items()):
        if not pairs or i not in poses or j not in poses:
            continue
        ui = np.array([p[0] for p in pairs], dtype=float)
        uj = np.array([p[1] for p in pairs], dtype=float)
        ni, _ = undistort_points(ui, intrinsics[i])
        nj, _ = undistort_points(uj, intrinsics[j])
        X, status = triangulate_points(ni, nj, poses[j], poses[i])
        good = status != TRI_BEHIND
        excluded += int((~good).sum())
        if not good.any():
            continue
        pi, _ = project_points(X[good], poses[i], intrinsics[i])
        pj, _ = project_points(X[good], poses[j], intrinsics[j])
        d = np.concatenate([np.linalg.norm(pi - ui[good], axis=1), np.linalg.norm(pj - uj[good], axis=1)])
        per_pair[(i, j)] = float(d.mean())
        dists.append(d)
    if excluded:
        log.warning("%d annotated pairs triangulated behind a camera and were excluded", excluded)
    rpe = float(np.concatenate(dists).mean()) if dists else math.nan
    return RPEReport(rpe, per_pair, excluded)


def err_ratio(rpe: float, width: float, height: float) -> float:
    """Error resolution ratio in percent."""
    if width <= 0 or height <= 0:
        raise ValueError("image size must be positive")
    return 100.0 * rpe / min(width, height)


@dataclass
class InlierStats:
    correct: int
    wrong: int
    correct_accepted: int
    wrong_accepted: int

    @property
    def recall(self) -> float:
        return self.correct_accepted / self.correct if self.correct else 1.0

    @property
    def accepted_outlier_rate(self) -> float:
        return self.wrong_accepted / self.wrong if self.wrong else 0.0


def inlier_stats(result, identity: Mapping[int, Mapping[int, int]]) -> InlierStats:
    """Score RANSAC masks against the true person identities.

    A correspondence is correct when both of its tracks belong to the same
    person.  ``identity`` maps camera -> track id -> person.
    """
    ref = result.reference
    totals = [0, 0, 0, 0]
    for c, pr in result.pairs.items():
        for q, ok in zip(pr.correspondences.pairs, pr.inliers):
            same = identity[ref][q.person_id] == identity[c][pr.association[q.person_id]]
            totals[0 if same else 1] += 1
            if ok:
                totals[2 if same else 3] += 1
    return InlierStats(*totals)
