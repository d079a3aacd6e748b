"""Readers and writers for the on-disk formats.

* intrinsics: JSON list of ``{id, fx, fy, cx, cy, dist, width, height}``
* tracks: one CSV per camera, ``frame,person_id,u_tl,v_tl,u_br,v_br``
* embeddings: CSV with a ``# dim=D`` line, then
  ``camera_id,person_id,frame,e0..e{D-1}``; ``.npz`` for the binary variant
* poses: JSON ``{camera_id: {"R": 9 floats row-major, "t": 3 floats, "metric": bool}}``
* annotated pairs: JSON list of ``{"cameras": [i, j], "pairs": [[[u, v], [u, v]], ...]}``

Floats are written with ``repr`` so every file round-trips bit-exactly.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .assoc import BBox, Tracklet
from .errors import ConfigError
from .geometry import CameraIntrinsics, PoseSE3

TRACK_HEADER = ["frame", "person_id", "u_tl", "v_tl", "u_br", "v_br"]


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _f(x) -> str:
    return repr(float(x))


# -- intrinsics ---------------------------------------------------------------


def write_intrinsics(path, intrinsics: Mapping[int, CameraIntrinsics]) -> None:
    data = [intrinsics[c].to_dict(camera_id=c) for c in sorted(intrinsics)]
    atomic_write_text(path, json.dumps(data, indent=2))


def read_intrinsics(path) -> dict[int, CameraIntrinsics]:
    try:
        data = json.loads(Path(path).read_text())
        if isinstance(data, dict):
            data = [{"id": k, **v} for k, v in data.items()]
        return {int(d["id"]): CameraIntrinsics.from_dict(d) for d in data}
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot read intrinsics from {path}: {exc}") from exc


# -- tracks -------------------------------------------------------------------


def write_tracks(path, tracklets: Sequence[Tracklet]) -> None:
    rows = [",".join(TRACK_HEADER)]
    boxes = sorted((b for t in tracklets for b in t.boxes), key=lambda b: (b.frame, b.person_id))
    for b in boxes:
        rows.append(",".join([str(b.frame), str(b.person_id), _f(b.u_tl), _f(b.v_tl), _f(b.u_br), _f(b.v_br)]))
    atomic_write_text(path, "\n".join(rows) + "\n")


def read_tracks(path, camera_id: int) -> list[Tracklet]:
    """MOT-style CSV to tracklets; a header row is optional."""
    by_person: dict[int, list[BBox]] = {}
    try:
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#") or row[0].strip() == "frame":
                    continue
                frame, pid = int(row[0]), int(row[1])
                u1, v1, u2, v2 = (float(x) for x in row[2:6])
                by_person.setdefault(pid, []).append(BBox(u1, v1, u2, v2, frame, pid, camera_id))
    except (OSError, ValueError, IndexError) as exc:
        raise ConfigError(f"cannot read tracks from {path}: {exc}") from exc
    out = []
    for pid in sorted(by_person):
        boxes = sorted(by_person[pid], key=lambda b: b.frame)
        out.append(Tracklet(camera_id, pid, boxes))
    return out


# -- embeddings -----------------------------------------------------------------


def write_embeddings(path, tracklets: Mapping[int, Sequence[Tracklet]]) -> None:
    path = Path(path)
    keys, vecs = [], []
    for c in sorted(tracklets):
        for t in tracklets[c]:
            if t.embeddings is None:
                continue
            for b, e in zip(t.boxes, t.embeddings):
                keys.append((c, t.person_id, b.frame))
                vecs.append(e)
    dim = len(vecs[0]) if vecs else 0
    if path.suffix == ".npz":
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, keys=np.asarray(keys, dtype=np.int64).reshape(-1, 3), vectors=np.asarray(vecs).reshape(-1, dim))
        return
    lines = [f"# dim={dim}", ",".join(["camera_id", "person_id", "frame"] + [f"e{i}" for i in range(dim)])]
    for k, v in zip(keys, vecs):
        lines.append(",".join([str(k[0]), str(k[1]), str(k[2])] + [_f(x) for x in v]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_embeddings(path) -> dict[tuple[int, int, int], np.ndarray]:
    path = Path(path)
    try:
        if path.suffix == ".npz":
            with np.load(path) as z:
                return {tuple(int(x) for x in k): v for k, v in zip(z["keys"], z["vectors"])}
        table: dict = {}
        dim = None
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row:
                    continue
                head = row[0].strip()
                if head.startswith("#"):
                    if "dim=" in head:
                        dim = int(head.split("dim=")[1])
                    continue
                if head == "camera_id":
                    continue
                vec = np.array([float(x) for x in row[3:]])
                if dim is not None and len(vec) != dim:
                    raise ValueError(f"row has {len(vec)} values, header declares {dim}")
                table[(int(row[0]), int(row[1]), int(row[2]))] = vec
        return table
    except (OSError, ValueError, KeyError, IndexError) as exc:
        raise ConfigError(f"cannot read embeddings from {path}: {exc}") from exc


def attach_embeddings(tracklets: Sequence[Tracklet], table: Mapping) -> list[Tracklet]:
    """Attach embeddings to tracklets; tracklets lacking any stay without."""
    out = []
    for t in tracklets:
        vecs = [table.get((t.camera_id, t.person_id, b.frame)) for b in t.boxes]
        emb = np.vstack(vecs) if vecs and all(v is not None for v in vecs) else None
        out.append(Tracklet(t.camera_id, t.person_id, t.boxes, emb))
    return out


# -- poses ----------------------------------------------------------------------


def poses_to_json(poses: Mapping[int, PoseSE3]) -> dict:
    return {
        str(c): {
            "R": [float(x) for x in np.asarray(poses[c].rotation).ravel()],
            "t": [float(x) for x in poses[c].translation],
            "metric": bool(poses[c].metric),
        }
        for c in sorted(poses)
    }


def poses_from_json(data: Mapping) -> dict[int, PoseSE3]:
    return {
        int(c): PoseSE3(np.reshape(v["R"], (3, 3)), np.asarray(v["t"], dtype=float), bool(v.get("metric", True)))
        for c, v in data.items()
    }


def write_poses(path, poses: Mapping[int, PoseSE3]) -> None:
    atomic_write_text(path, json.dumps(poses_to_json(poses), indent=2))


def read_poses(path) -> dict[int, PoseSE3]:
    try:
        return poses_from_json(json.loads(Path(path).read_text()))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot read poses from {path}: {exc}") from exc


# -- annotated pairs ----------------------------------------------------------------


def write_annotated(path, annotated: Mapping[tuple[int, int], Sequence]) -> None:
    data = [
        {"cameras": [int(i), int(j)], "pairs": [[list(p), list(q)] for p, q in annotated[(i, j)]]}
        for i, j in sorted(annotated)
    ]
    atomic_write_text(path, json.dumps(data, indent=2))


def read_annotated(path) -> dict[tuple[int, int], list]:
    try:
        data = json.loads(Path(path).read_text())
        return {
            (int(d["cameras"][0]), int(d["cameras"][1])): [(tuple(p), tuple(q)) for p, q in d["pairs"]]
            for d in data
        }
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot read annotated pairs from {path}: {exc}") from exc


def write_rows(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(_f(x) if isinstance(x, (float, np.floating)) else str(x) for x in r))
    atomic_write_text(path, "\n".join(lines) + "\n")
