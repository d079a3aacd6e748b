"""Robustness studies: pose error against box noise and against correspondence count."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

from . import io
from .errors import CalibrationError
from .geometry import PoseSE3
from .metrics import camera_pose_error, mean_pose_error
from .pipeline import CalibrationInputs, Settings, calibrate

log = logging.getLogger(__name__)

DEFAULT_NOISE_LEVELS = (0, 1, 2, 5, 10, 20, 50)
DEFAULT_COUNTS = (5, 8, 10, 20, 30, 50, 100, None)
MIN_COUNT = 8

STUDY_HEADER = ["value", "status", "position_mm", "orientation_deg", "n_correspondences"]


@dataclass
class StudyRow:
    value: float | int | None  # noise level, or correspondence count (None = all)
    status: str  # "ok", "infeasible" or "failed: <reason>"
    position_mm: float = float("nan")
    orientation_deg: float = float("nan")
    n_correspondences: int = 0

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def as_row(self):
        v = "all" if self.value is None else self.value
        return [v, self.status, self.position_mm, self.orientation_deg, self.n_correspondences]


def _run(inputs, settings, gt, value) -> StudyRow:
    try:
        result = calibrate(inputs, settings)
    except CalibrationError as exc:
        log.warning("study point %s failed: %s", value, exc)
        return StudyRow(value, f"failed: {type(exc).__name__}")
    errors = camera_pose_error(result.poses, gt, reference=settings.reference)
    pos, rot = mean_pose_error(errors, skip=[settings.reference])
    n = sum(int(p.used.sum()) for p in result.pairs.values())
    return StudyRow(value, "ok", pos, rot, n)


def study_noise(
    inputs: CalibrationInputs,
    settings: Settings,
    gt_poses: Mapping[int, PoseSE3],
    levels: Sequence[float] = DEFAULT_NOISE_LEVELS,
) -> list[StudyRow]:
    """Mean camera pose error after uniform corner noise of each level (px).

    A level that fails to calibrate is recorded with its reason and the
    remaining levels still run.
    """
    return [_run(inputs, replace(settings, box_noise=float(n)), gt_poses, n) for n in levels]


def study_count(
    inputs: CalibrationInputs,
    settings: Settings,
    gt_poses: Mapping[int, PoseSE3],
    counts: Sequence[int | None] = DEFAULT_COUNTS,
) -> list[StudyRow]:
    """Mean camera pose error using only the first k correspondences of each pair.

    ``None`` stands for all correspondences; counts below 8 are infeasible.
    """
    rows = []
    for k in counts:
        if k is not None and k < MIN_COUNT:
            rows.append(StudyRow(k, "infeasible"))
            continue
        rows.append(_run(inputs, replace(settings, max_correspondences=k), gt_poses, k))
    return rows


def write_study(path, rows: Sequence[StudyRow]) -> None:
    io.write_rows(path, STUDY_HEADER, [r.as_row() for r in rows])
