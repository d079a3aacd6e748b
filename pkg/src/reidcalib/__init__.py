"""Wide-baseline multi-camera calibration from people seen by several cameras.

Boxes of the same person are associated across cameras by appearance
embeddings, box centers become point correspondences, and camera poses are
solved with epipolar geometry and bundle adjustment.
"""

from .assoc import BBox, Tracklet, hungarian_assign, match_across_cameras, sample_tracklet
from .correspond import bbox_center, extract_correspondences, inject_bbox_noise
from .errors import CalibrationError, ConfigError
from .geometry import (
    CameraIntrinsics,
    CorrespondenceSet,
    PointPair,
    PoseSE3,
    RansacConfig,
    decompose_essential,
    estimate_essential,
    project,
    ransac_essential,
    sampson_distance,
    triangulate,
)
from .metrics import camera_pose_error, err_ratio, reprojection_error_metric
from .optim import LMConfig, ScalePrior, global_ba, local_ba, merge_3d_points, resolve_scale
from .pipeline import CalibrationInputs, CalibrationResult, PairFailure, PriorObservation, Settings, calibrate
from .tracking import track_person

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "CalibrationError",
    "CalibrationInputs",
    "CalibrationResult",
    "CameraIntrinsics",
    "ConfigError",
    "CorrespondenceSet",
    "LMConfig",
    "PairFailure",
    "PointPair",
    "PoseSE3",
    "PriorObservation",
    "RansacConfig",
    "ScalePrior",
    "Settings",
    "Tracklet",
    "bbox_center",
    "calibrate",
    "camera_pose_error",
    "decompose_essential",
    "err_ratio",
    "estimate_essential",
    "extract_correspondences",
    "global_ba",
    "hungarian_assign",
    "inject_bbox_noise",
    "local_ba",
    "match_across_cameras",
    "merge_3d_points",
    "project",
    "ransac_essential",
    "reprojection_error_metric",
    "resolve_scale",
    "sample_tracklet",
    "sampson_distance",
    "track_person",
    "triangulate",
]
