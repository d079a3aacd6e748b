"""Cross-view person association from precomputed appearance embeddings."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import MissingFeatureError


@dataclass(frozen=True)
class BBox:
    u_tl: float
    v_tl: float
    u_br: float
    v_br: float
    frame: int = 0
    person_id: int = 0
    camera_id: int = 0

    def __post_init__(self):
        coords = (self.u_tl, self.v_tl, self.u_br, self.v_br)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError("box coordinates must be finite")
        if not (self.u_tl < self.u_br and self.v_tl < self.v_br):
            raise ValueError(f"degenerate box {coords}")

    @property
    def corners(self) -> tuple[float, float, float, float]:
        return (self.u_tl, self.v_tl, self.u_br, self.v_br)


@dataclass
class Tracklet:
    """Time-ordered boxes of one person in one camera.

    ``embeddings`` is either None or an (n_boxes, D) array aligned with ``boxes``.
    """

    camera_id: int
    person_id: int
    boxes: list[BBox] = field(default_factory=list)
    embeddings: np.ndarray | None = None

    def __post_init__(self):
        frames = [b.frame for b in self.boxes]
        if any(f1 >= f2 for f1, f2 in zip(frames, frames[1:])):
            raise ValueError("tracklet boxes must be strictly increasing in frame")
        self._check_members()

    def _check_members(self):
        for b in self.boxes:
            if b.camera_id != self.camera_id or b.person_id != self.person_id:
                raise ValueError("all boxes of a tracklet must share camera and person id")
        if self.embeddings is not None:
            self.embeddings = np.asarray(self.embeddings, dtype=float)
            if self.embeddings.ndim != 2 or len(self.embeddings) != len(self.boxes):
                raise ValueError("need one embedding row per box")

    @classmethod
    def _sampled(cls, camera_id, person_id, boxes, embeddings) -> "Tracklet":
        # sampled tracklets may repeat boxes, so skip the strict-order check
        t = cls.__new__(cls)
        t.camera_id, t.person_id, t.boxes, t.embeddings = camera_id, person_id, list(boxes), embeddings
        t._check_members()
        return t

    def __len__(self) -> int:
        return len(self.boxes)

    @property
    def frames(self) -> list[int]:
        return [b.frame for b in self.boxes]

    def box_at(self, frame: int) -> BBox | None:
        return self._index().get(frame)

    def _index(self) -> dict[int, BBox]:
        idx = getattr(self, "_frame_index", None)
        if idx is None or len(idx) != len(self.boxes):
            idx = {b.frame: b for b in self.boxes}
            self._frame_index = idx
        return idx


@dataclass
class Assignment:
    matches: list[tuple[int, int]]
    unmatched_a: list[int]
    unmatched_b: list[int]
    total_cost: float


def sample_tracklet(t: Tracklet, n: int = 8, seed=0) -> Tracklet:
    """Restricted random sampling: one box drawn from each of ``n`` equal chunks.

    Tracklets shorter than ``n`` are padded by cycling through their boxes;
    the padded sample is returned in time order.
    """
    m = len(t)
    if m == 0:
        raise ValueError("cannot sample an empty tracklet")
    if m < n:
        idx = np.sort(np.arange(n) % m)
    else:
        rng = np.random.default_rng(seed)
        bounds = (np.arange(n + 1) * m) // n
        idx = np.array([rng.integers(bounds[k], bounds[k + 1]) for k in range(n)])
    emb = None if t.embeddings is None else t.embeddings[idx]
    return Tracklet._sampled(t.camera_id, t.person_id, [t.boxes[i] for i in idx], emb)


def pool_features(t: Tracklet) -> np.ndarray:
    """Average-pool the tracklet embeddings and L2-normalize the result."""
    if t.embeddings is None or len(t.embeddings) != len(t.boxes) or len(t.boxes) == 0:
        raise MissingFeatureError(f"camera {t.camera_id} person {t.person_id} has no embeddings")
    f = t.embeddings.mean(axis=0)
    norm = np.linalg.norm(f)
    if norm == 0:
        raise MissingFeatureError("pooled feature is the zero vector")
    return f / norm


def feature_distance(fa, fb) -> float:
    fa, fb = np.asarray(fa, dtype=float), np.asarray(fb, dtype=float)
    if fa.shape != fb.shape:
        raise ValueError(f"feature dimensions differ: {fa.shape} vs {fb.shape}")
    return float(np.linalg.norm(fa - fb))


# --------------------------------------------------------------------------
# Kuhn-Munkres


def _kuhn_munkres(cost: np.ndarray):
    """Shortest-augmenting-path Hungarian method for rows <= cols.

    Returns ``(col_of_row, u, v)`` with optimal dual potentials.
    """
    n, m = cost.shape
    INF = math.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=int)  # p[j]: row (1-based) matched to column j
    way = np.zeros(m + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, INF)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], INF)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of_row = np.full(n, -1)
    for j in range(1, m + 1):
        if p[j]:
            col_of_row[p[j] - 1] = j - 1
    return col_of_row, u[1:], v[1:]


def _solve(cost: np.ndarray):
    """Optimal matching of min(m, n) pairs.

    Returns ``(pairs, total, reduced)`` where ``reduced`` holds the reduced
    costs under optimal dual potentials; every optimal matching only uses
    entries whose reduced cost is zero.
    """
    m, n = cost.shape
    if m == 0 or n == 0:
        return [], 0.0, np.zeros((m, n))
    if m <= n:
        cols, u, v = _kuhn_munkres(cost)
        pairs = [(i, int(j)) for i, j in enumerate(cols)]
        reduced = cost - u[:, None] - v[None, :]
    else:
        rows, u, v = _kuhn_munkres(cost.T)
        pairs = sorted((int(i), j) for j, i in enumerate(rows))
        reduced = cost - v[:, None] - u[None, :]
    return pairs, float(sum(cost[i, j] for i, j in pairs)), reduced


def hungarian_assign(cost, max_cost: float | None = None) -> Assignment:
    """Minimum-cost one-to-one assignment on a rectangular cost matrix.

    Among equally cheap assignments the lexicographically smallest sorted
    match list is returned.  Matches costing more than ``max_cost`` are
    demoted to unmatched after solving.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost entries must be finite")
    m, n = cost.shape
    k = min(m, n)
    pairs, opt, reduced = _solve(cost)
    tol = 1e-9 * max(1.0, float(np.abs(cost).max(initial=0.0)) * max(k, 1))

    # Decide rows in order, preferring the smallest column that still admits
    # an optimal completion.  ``current`` is always some optimal matching
    # consistent with the decisions so far.
    current = dict(pairs)
    matches: list[tuple[int, int]] = []
    used: set[int] = set()
    spent = 0.0
    for i in range(m):
        if len(matches) == k:
            break
        cur_j = current.get(i)
        chosen = None
        for j in range(n if cur_j is None else cur_j):
            if j in used or reduced[i, j] > tol:
                continue
            rows = list(range(i + 1, m))
            cols = [c for c in range(n) if c not in used and c != j]
            need = k - len(matches) - 1
            if need and min(len(rows), len(cols)) != need:
                continue
            sub_pairs, sub_cost, _ = _solve(cost[np.ix_(rows, cols)]) if need else ([], 0.0, None)
            if abs(spent + cost[i, j] + sub_cost - opt) <= tol:
                chosen = j
                current = dict(matches)
                current[i] = j
                current.update({rows[r]: cols[c] for r, c in sub_pairs})
                break
        if chosen is None:
            chosen = cur_j
        if chosen is not None:
            matches.append((i, chosen))
            used.add(chosen)
            spent += cost[i, chosen]

    if max_cost is not None:
        matches = [(i, j) for i, j in matches if cost[i, j] <= max_cost]
    mi = {i for i, _ in matches}
    mj = {j for _, j in matches}
    return Assignment(
        matches=matches,
        unmatched_a=[i for i in range(m) if i not in mi],
        unmatched_b=[j for j in range(n) if j not in mj],
        total_cost=float(sum(cost[i, j] for i, j in matches)),
    )


def tracklet_feature(t: Tracklet, n: int = 8, seed: int = 0) -> np.ndarray:
    """Pooled feature of a tracklet with a sample seeded by (seed, camera, person)."""
    return pool_features(sample_tracklet(t, n, seed=[seed, t.camera_id & 0xFFFFFFFF, t.person_id & 0xFFFFFFFF]))


def cost_matrix(tracklets_a: Sequence[Tracklet], tracklets_b: Sequence[Tracklet], n: int = 8, seed: int = 0):
    fa = [tracklet_feature(t, n, seed) for t in tracklets_a]
    fb = [tracklet_feature(t, n, seed) for t in tracklets_b]
    return np.array([[feature_distance(x, y) for y in fb] for x in fa]).reshape(len(fa), len(fb))


def match_across_cameras(
    tracklets_a: Sequence[Tracklet],
    tracklets_b: Sequence[Tracklet],
    max_cost: float | None = None,
    n: int = 8,
    seed: int = 0,
) -> Assignment:
    """Associate the tracklets of two cameras by pooled re-ID feature distance."""
    return hungarian_assign(cost_matrix(tracklets_a, tracklets_b, n, seed), max_cost)
