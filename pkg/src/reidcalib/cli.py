"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io, plotting
from .errors import CalibrationError, ConfigError
from .metrics import camera_pose_error, err_ratio, mean_pose_error, reprojection_error_metric
from .optim import write_cost_trace
from .pipeline import PairFailure, calibrate, inputs_from_config, load_config, settings_from_config
from .studies import DEFAULT_COUNTS, DEFAULT_NOISE_LEVELS, study_count, study_noise, write_study
from .synth import export_dataset, spec_from_dict
from .tracking import birdseye, ground_frame, track_person, write_trajectory

log = logging.getLogger("reidcalib")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


def _base(cfg) -> Path:
    return Path(cfg.get("_base", "."))


def _gt(cfg):
    if not cfg.get("ground_truth"):
        raise ConfigError("this command needs 'ground_truth' in the config")
    return io.read_poses(_base(cfg) / cfg["ground_truth"])


def _calibrate(cfg, seed, out: Path):
    inputs = inputs_from_config(cfg)
    settings = settings_from_config(cfg, seed)
    result = calibrate(inputs, settings)
    out.mkdir(parents=True, exist_ok=True)
    io.write_poses(out / "poses.json", result.poses)
    result.save(out / "result.json")
    traces = {f"local_{c}": p.cost_trace for c, p in sorted(result.pairs.items())}
    traces["global"] = result.global_trace
    write_cost_trace(out / "cost_trace.csv", traces)
    plotting.plot_cost_traces(traces, out / "cost_trace.png")
    return inputs, settings, result


def cmd_calibrate(args, cfg) -> int:
    out = Path(args.out)
    _, _, result = _calibrate(cfg, args.seed, out)
    truth = io.read_poses(_base(cfg) / cfg["ground_truth"]) if cfg.get("ground_truth") else None
    if truth is not None:
        inv = truth[result.reference].inverse()
        truth = {c: p.compose(inv) for c, p in truth.items()}
    pts = np.array(list(result.points.values())) if result.points else None
    plotting.plot_camera_layout(result.poses, out / "camera_layout.png", truth, pts)
    print(f"calibrated {len(result.poses)} cameras; global RMS {result.global_rms:.3f} px; wrote {out}")
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    out = Path(args.out)
    gt = _gt(cfg)
    intrinsics = io.read_intrinsics(_base(cfg) / cfg["intrinsics"])
    if cfg.get("estimate"):
        poses = io.read_poses(_base(cfg) / cfg["estimate"])
        reference = int(cfg.get("reference_camera", 0))
    else:
        _, _, result = _calibrate(cfg, args.seed, out)
        poses, reference = result.poses, result.reference
    errors = camera_pose_error(poses, gt, reference=reference)
    rows = []
    for c, (pos, rot) in errors.items():
        rows.append(("position_mm", c, pos))
        rows.append(("orientation_deg", c, rot))
    pos, rot = mean_pose_error(errors, skip=[reference])
    rows += [("mean_position_mm", "all", pos), ("mean_orientation_deg", "all", rot)]
    if cfg.get("annotated_pairs"):
        report = reprojection_error_metric(poses, io.read_annotated(_base(cfg) / cfg["annotated_pairs"]), intrinsics)
        k = intrinsics[reference]
        rows += [
            ("rpe_px", "all", report.rpe),
            ("err_percent", "all", err_ratio(report.rpe, k.width, k.height)),
            ("rpe_excluded_pairs", "all", report.excluded),
        ]
    io.write_rows(out / "metrics.csv", ["metric", "camera", "value"], rows)
    print(f"mean camera pose error {pos:.1f} mm, {rot:.3f} deg; wrote {out / 'metrics.csv'}")
    return EXIT_OK


def cmd_synth(args, cfg) -> int:
    scene = dict(cfg.get("scene", {})) if cfg else {}
    if args.seed is not None:
        scene["seed"] = args.seed
    path = export_dataset(spec_from_dict(scene), args.out)
    print(f"wrote synthetic dataset, config at {path}")
    return EXIT_OK


def _study(args, cfg, kind: str) -> int:
    out = Path(args.out)
    inputs = inputs_from_config(cfg)
    settings = settings_from_config(cfg, args.seed)
    gt = _gt(cfg)
    study_cfg = cfg.get("study", {})
    if kind == "noise":
        levels = study_cfg.get("noise_levels", list(DEFAULT_NOISE_LEVELS))
        rows = study_noise(inputs, settings, gt, levels)
        write_study(out / "study_noise.csv", rows)
        plotting.plot_study(rows, out / "study_noise.png", "corner noise N (px)")
    else:
        counts = study_cfg.get("counts", list(DEFAULT_COUNTS))
        rows = study_count(inputs, settings, gt, counts)
        write_study(out / "study_count.csv", rows)
        plotting.plot_study(rows, out / "study_count.png", "correspondences per pair", log_x=True)
    for r in rows:
        print(",".join(str(x) for x in r.as_row()))
    return EXIT_OK


def cmd_track(args, cfg) -> int:
    out = Path(args.out)
    inputs, _, result = _calibrate(cfg, args.seed, out)
    ids = cfg.get("tracking", {}).get("person_ids") or [t.person_id for t in inputs.tracklets[result.reference]]
    trajectories = {pid: track_person(result, pid, inputs.tracklets, inputs.intrinsics) for pid in ids}
    frame = ground_frame(np.vstack([t[:, 1:] for t in trajectories.values() if len(t)]))
    tops = {}
    for pid, traj in trajectories.items():
        write_trajectory(out / f"trajectory_{pid}.csv", traj)
        top = birdseye(traj, frame)
        io.write_rows(out / f"birdseye_{pid}.csv", ["frame", "u", "v"], [(int(r[0]), r[1], r[2]) for r in top])
        tops[pid] = top[:, 1:]
    plotting.plot_birdseye(tops, out / "birdseye.png")
    print(f"tracked {len(trajectories)} people; wrote {out}")
    return EXIT_OK


COMMANDS = {
    "calibrate": cmd_calibrate,
    "eval": cmd_eval,
    "synth": cmd_synth,
    "study-noise": lambda a, c: _study(a, c, "noise"),
    "study-count": lambda a, c: _study(a, c, "count"),
    "track": cmd_track,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reidcalib", description="Multi-camera calibration from people.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=(name != "synth"), help="JSON configuration file")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else {}
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PairFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except CalibrationError as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
