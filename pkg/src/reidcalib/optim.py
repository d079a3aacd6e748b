"""Bundle adjustment by Levenberg-Marquardt, scale recovery and point merging.

The solver works on dense normal equations with the point block eliminated
through its Schur complement, which is appropriate for networks of at most a
few tens of cameras and some thousands of points.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from typing import Hashable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import BehindCameraError, DegeneratePriorError, NonConvergenceError
from .geometry import CameraIntrinsics, CorrespondenceSet, PoseSE3, exp_so3

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LMConfig:
    max_iters: int = 100
    cost_tolerance: float = 1e-10
    param_tolerance: float = 1e-12
    initial_damping: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.5
    robust_loss_scale: float | None = 3.0  # Huber scale in pixels; None -> plain L2
    max_damping: float = 1e12

    def __post_init__(self):
        for name in ("max_iters", "cost_tolerance", "param_tolerance", "initial_damping", "damping_up", "damping_down"):
            if not getattr(self, name) > 0:
                raise ValueError(f"LMConfig.{name} must be positive")
        if self.robust_loss_scale is not None and not self.robust_loss_scale > 0:
            raise ValueError("LMConfig.robust_loss_scale must be positive or None")


@dataclass(frozen=True)
class BACamera:
    pose: PoseSE3
    intrinsics: CameraIntrinsics
    fixed: bool = False
    # keep ||t|| constant (2-dof translation on a sphere)
    fix_translation_norm: bool = False


@dataclass
class BAProblem:
    cameras: list[BACamera]
    points: np.ndarray
    cam_idx: np.ndarray
    pt_idx: np.ndarray
    pixels: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        self.points = np.array(self.points, dtype=float).reshape(-1, 3)
        self.cam_idx = np.asarray(self.cam_idx, dtype=int)
        self.pt_idx = np.asarray(self.pt_idx, dtype=int)
        self.pixels = np.asarray(self.pixels, dtype=float).reshape(-1, 2)
        if self.weights is None:
            self.weights = np.ones(len(self.cam_idx))
        self.weights = np.asarray(self.weights, dtype=float)

    @classmethod
    def from_observations(cls, cameras, points, observations: Iterable[tuple]) -> "BAProblem":
        """Build from ``(camera_idx, point_idx, pixel[, weight])`` tuples."""
        obs = list(observations)
        cam = [o[0] for o in obs]
        pt = [o[1] for o in obs]
        px = [o[2] for o in obs]
        w = [o[3] if len(o) > 3 else 1.0 for o in obs]
        return cls(list(cameras), points, cam, pt, np.reshape(px, (-1, 2)), w)

    @property
    def n_obs(self) -> int:
        return len(self.cam_idx)

    def validate(self) -> None:
        nc, npt = len(self.cameras), len(self.points)
        if self.cam_idx.size and (self.cam_idx.min() < 0 or self.cam_idx.max() >= nc):
            raise ValueError("observation references a missing camera")
        if self.pt_idx.size and (self.pt_idx.min() < 0 or self.pt_idx.max() >= npt):
            raise ValueError("observation references a missing point")
        if not any(c.fixed for c in self.cameras):
            raise ValueError("at least one camera must be fixed to remove the gauge freedom")
        counts = np.bincount(self.pt_idx, minlength=npt)
        if npt and counts.min() < 2:
            raise ValueError("every point must be observed at least twice")
        if np.any(self.weights < 0):
            raise ValueError("observation weights must be nonnegative")

    def copy(self) -> "BAProblem":
        return BAProblem(
            list(self.cameras), self.points.copy(), self.cam_idx, self.pt_idx, self.pixels, self.weights
        )


class LMResult(NamedTuple):
    problem: BAProblem
    cost_trace: list[float]


# --------------------------------------------------------------------------
# residuals and Jacobians


def _camera_blocks(problem: BAProblem):
    """Column layout of the free camera parameters.

    Returns ``(offsets, dofs, total)``; fixed cameras have offset -1.
    """
    offsets, dofs, total = [], [], 0
    for cam in problem.cameras:
        if cam.fixed:
            offsets.append(-1)
            dofs.append(0)
        else:
            d = 5 if cam.fix_translation_norm else 6
            offsets.append(total)
            dofs.append(d)
            total += d
    return offsets, dofs, total


def _sphere_basis(t: np.ndarray) -> np.ndarray:
    """Orthonormal 3x2 basis of the plane orthogonal to ``t``."""
    u = t / np.linalg.norm(t)
    helper = np.eye(3)[np.argmin(np.abs(u))]
    e1 = np.cross(u, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(u, e1)
    return np.stack([e1, e2], axis=1)


def _stack_cameras(problem: BAProblem):
    R = np.stack([c.pose.rotation for c in problem.cameras])
    t = np.stack([c.pose.translation for c in problem.cameras])
    f = np.array([[c.intrinsics.fx, c.intrinsics.fy] for c in problem.cameras])
    pp = np.array([[c.intrinsics.cx, c.intrinsics.cy] for c in problem.cameras])
    dist = np.stack([c.intrinsics.dist for c in problem.cameras])
    return R, t, f, pp, dist


def reprojection_residuals(problem: BAProblem) -> tuple[np.ndarray, np.ndarray]:
    """Projected minus observed pixels, shape (M, 2), plus the depth of each observation."""
    R, t, f, pp, dist = _stack_cameras(problem)
    ci, pi = problem.cam_idx, problem.pt_idx
    Xc = np.einsum("mij,mj->mi", R[ci], problem.points[pi]) + t[ci]
    z = Xc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        xy = Xc[:, :2] / z[:, None]
    d = dist[ci]
    x, y = xy[:, 0], xy[:, 1]
    r2 = x * x + y * y
    radial = 1 + r2 * (d[:, 0] + r2 * (d[:, 1] + r2 * d[:, 4]))
    xd = x * radial + 2 * d[:, 2] * x * y + d[:, 3] * (r2 + 2 * x * x)
    yd = y * radial + d[:, 2] * (r2 + 2 * y * y) + 2 * d[:, 3] * x * y
    uv = np.stack([xd, yd], axis=1) * f[ci] + pp[ci]
    return uv - problem.pixels, z


def _observation_jacobians(problem: BAProblem):
    """Per-observation Jacobians of the pixel residual.

    Returns ``(J_cam, J_pt)`` of shapes (M, 2, 6) and (M, 2, 3); camera
    columns are ``[d_omega, d_t]`` with the rotation perturbed on the left.
    """
    R, t, f, pp, dist = _stack_cameras(problem)
    ci, pi = problem.cam_idx, problem.pt_idx
    RX = np.einsum("mij,mj->mi", R[ci], problem.points[pi])
    Xc = RX + t[ci]
    z = Xc[:, 2]
    x, y = Xc[:, 0] / z, Xc[:, 1] / z
    d = dist[ci]
    k1, k2, p1, p2, k3 = d.T
    r2 = x * x + y * y
    radial = 1 + r2 * (k1 + r2 * (k2 + r2 * k3))
    drad = k1 + 2 * k2 * r2 + 3 * k3 * r2 * r2  # d radial / d r2
    dxd_dx = radial + 2 * x * x * drad + 2 * p1 * y + 6 * p2 * x
    dxd_dy = 2 * x * y * drad + 2 * p1 * x + 2 * p2 * y
    dyd_dx = 2 * x * y * drad + 2 * p1 * x + 2 * p2 * y
    dyd_dy = radial + 2 * y * y * drad + 6 * p1 * y + 2 * p2 * x
    Jd = np.stack([np.stack([dxd_dx, dxd_dy], -1), np.stack([dyd_dx, dyd_dy], -1)], axis=1)
    Jd *= f[ci][:, :, None]
    zero = np.zeros_like(z)
    Jp = np.stack(
        [np.stack([1 / z, zero, -x / z], -1), np.stack([zero, 1 / z, -y / z], -1)], axis=1
    )
    J_xc = Jd @ Jp  # (M, 2, 3) d pixel / d camera-frame point
    # d Xc / d omega = -[R X]x
    skew_rx = np.zeros((len(z), 3, 3))
    skew_rx[:, 0, 1], skew_rx[:, 0, 2] = -RX[:, 2], RX[:, 1]
    skew_rx[:, 1, 0], skew_rx[:, 1, 2] = RX[:, 2], -RX[:, 0]
    skew_rx[:, 2, 0], skew_rx[:, 2, 1] = -RX[:, 1], RX[:, 0]
    J_cam = np.concatenate([-J_xc @ skew_rx, J_xc], axis=2)
    J_pt = J_xc @ R[ci]
    return J_cam, J_pt


def _local_camera_jacobian(problem: BAProblem, J_cam: np.ndarray):
    """Map (M, 2, 6) camera Jacobians to the dense free-parameter layout (M, 2, P)."""
    offsets, dofs, total = _camera_blocks(problem)
    out = np.zeros((problem.n_obs, 2, total))
    for c, cam in enumerate(problem.cameras):
        if cam.fixed:
            continue
        m = problem.cam_idx == c
        o = offsets[c]
        out[m, :, o : o + 3] = J_cam[m, :, :3]
        if cam.fix_translation_norm:
            out[m, :, o + 3 : o + 5] = J_cam[m, :, 3:] @ _sphere_basis(cam.pose.translation)
        else:
            out[m, :, o + 3 : o + 6] = J_cam[m, :, 3:]
    return out


def reprojection_jacobian(problem: BAProblem) -> tuple[np.ndarray, np.ndarray]:
    """Dense residual vector (2M,) and Jacobian (2M, P + 3N) in local coordinates.

    Columns are ordered as free cameras (see :func:`retract`) then points.
    Intended for checking and small problems; the solver never forms this.
    """
    r, _ = reprojection_residuals(problem)
    J_cam, J_pt = _observation_jacobians(problem)
    Jc = _local_camera_jacobian(problem, J_cam)
    M, npt = problem.n_obs, len(problem.points)
    Jfull = np.zeros((M, 2, Jc.shape[2] + 3 * npt))
    Jfull[:, :, : Jc.shape[2]] = Jc
    cols = Jc.shape[2] + 3 * problem.pt_idx[:, None] + np.arange(3)
    Jfull[np.arange(M)[:, None, None], np.arange(2)[None, :, None], cols[:, None, :]] = J_pt
    return r.reshape(-1), Jfull.reshape(2 * M, -1)


def retract(problem: BAProblem, delta: np.ndarray) -> BAProblem:
    """Apply a local-coordinate step to the free cameras and all points."""
    offsets, dofs, total = _camera_blocks(problem)
    cams = []
    for c, cam in enumerate(problem.cameras):
        if cam.fixed:
            cams.append(cam)
            continue
        o = offsets[c]
        R = exp_so3(delta[o : o + 3]) @ cam.pose.rotation
        t = cam.pose.translation
        if cam.fix_translation_norm:
            norm = np.linalg.norm(t)
            t_new = t + _sphere_basis(t) @ delta[o + 3 : o + 5]
            t = t_new * (norm / np.linalg.norm(t_new))
        else:
            t = t + delta[o + 3 : o + 6]
        cams.append(replace(cam, pose=PoseSE3(R, t, cam.pose.metric)))
    pts = problem.points + delta[total:].reshape(-1, 3)
    return BAProblem(cams, pts, problem.cam_idx, problem.pt_idx, problem.pixels, problem.weights)


# --------------------------------------------------------------------------
# robust cost


def _robust(sq: np.ndarray, scale: float | None):
    """Huber loss on squared residual norms: returns (rho, rho')."""
    if scale is None:
        return sq, np.ones_like(sq)
    d2 = scale * scale
    big = sq > d2
    rho = sq.copy()
    drho = np.ones_like(sq)
    root = np.sqrt(sq[big])
    rho[big] = 2 * scale * root - d2
    drho[big] = scale / root
    return rho, drho


def problem_cost(problem: BAProblem, cfg: LMConfig = LMConfig()) -> float:
    """``0.5 * sum(w * rho(|r|^2))``; infinite if any point is behind a camera."""
    r, z = reprojection_residuals(problem)
    if np.any(~(z > 0)):
        return math.inf
    rho, _ = _robust(np.sum(r * r, axis=1), cfg.robust_loss_scale)
    return 0.5 * float(np.sum(problem.weights * rho))


def rms_reprojection(problem: BAProblem) -> float:
    r, _ = reprojection_residuals(problem)
    if len(r) == 0:
        return 0.0
    return float(np.sqrt(np.mean(np.sum(r * r, axis=1))))


# --------------------------------------------------------------------------
# Levenberg-Marquardt


def _param_norm(problem: BAProblem) -> float:
    t = [c.pose.translation for c in problem.cameras if not c.fixed]
    return float(np.linalg.norm(np.concatenate([np.ravel(t), problem.points.ravel()])))


def _normal_equations(problem: BAProblem, cfg: LMConfig):
    r, _ = reprojection_residuals(problem)
    J_cam, J_pt = _observation_jacobians(problem)
    Jc = _local_camera_jacobian(problem, J_cam)
    _, drho = _robust(np.sum(r * r, axis=1), cfg.robust_loss_scale)
    s = np.sqrt(problem.weights * drho)[:, None]
    r = r * s
    Jc = Jc * s[:, :, None]
    Jp = J_pt * s[:, :, None]

    npt = len(problem.points)
    P = Jc.shape[2]
    B = np.einsum("mki,mkj->ij", Jc, Jc)
    gc = np.einsum("mki,mk->i", Jc, r)
    C = np.zeros((npt, 3, 3))
    np.add.at(C, problem.pt_idx, np.einsum("mki,mkj->mij", Jp, Jp))
    gp = np.zeros((npt, 3))
    np.add.at(gp, problem.pt_idx, np.einsum("mki,mk->mi", Jp, r))
    Ecp = np.zeros((npt, P, 3))
    if P:
        np.add.at(Ecp, problem.pt_idx, np.einsum("mki,mkj->mij", Jc, Jp))
    return B, gc, C, gp, Ecp


def _solve_damped(B, gc, C, gp, Ecp, lam: float) -> np.ndarray:
    """Solve the damped normal equations via the Schur complement on points."""
    P = B.shape[0]
    floor = 1e-12 * max(1.0, float(np.max(np.abs(np.diagonal(C, axis1=1, axis2=2)), initial=0.0)))
    dC = np.maximum(np.diagonal(C, axis1=1, axis2=2), floor)
    Cd = C + lam * dC[:, :, None] * np.eye(3)
    Cinv = np.linalg.inv(Cd)
    if not np.all(np.isfinite(Cinv)):
        raise np.linalg.LinAlgError("singular point block")
    if P:
        dB = np.maximum(np.diag(B), 1e-12 * max(1.0, float(np.max(np.abs(np.diag(B))))))
        Bd = B + lam * np.diag(dB)
        ECinv = np.einsum("npi,nij->npj", Ecp, Cinv)  # (N, P, 3)
        S = Bd - np.einsum("npj,nqj->pq", ECinv, Ecp)
        rhs = -gc + np.einsum("npj,nj->p", ECinv, gp)
        L = np.linalg.cholesky(0.5 * (S + S.T))
        dc = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
        dp = -np.einsum("nij,nj->ni", Cinv, gp + np.einsum("npj,p->nj", Ecp, dc))
    else:
        dc = np.zeros(0)
        dp = -np.einsum("nij,nj->ni", Cinv, gp)
    return np.concatenate([dc, dp.ravel()])


def lm_minimize(problem: BAProblem, cfg: LMConfig = LMConfig()) -> LMResult:
    """Minimize the robust reprojection cost of ``problem``.

    Returns the optimized problem and the trace of accepted costs, which
    starts with the initial cost and is strictly decreasing afterwards.
    Fixed cameras are carried through untouched.

    Raises:
        NonConvergenceError: damping exceeded ``cfg.max_damping`` without an
            acceptable step; the error carries the best state found.
    """
    problem.validate()
    cost = problem_cost(problem, cfg)
    if not math.isfinite(cost):
        raise BehindCameraError("initial state has points behind a camera")
    trace = [cost]
    lam = cfg.initial_damping
    tiny = 1e-30 * max(problem.n_obs, 1)
    it = 0
    while it < cfg.max_iters and cost > tiny:
        B, gc, C, gp, Ecp = _normal_equations(problem, cfg)
        accepted = False
        while it < cfg.max_iters:
            it += 1
            try:
                delta = _solve_damped(B, gc, C, gp, Ecp, lam)
            except np.linalg.LinAlgError:
                lam *= cfg.damping_up
                if lam > cfg.max_damping:
                    raise NonConvergenceError("normal equations stayed singular", problem, trace)
                continue
            step = float(np.linalg.norm(delta))
            if step <= cfg.param_tolerance * (_param_norm(problem) + cfg.param_tolerance):
                return LMResult(problem, trace)
            candidate = retract(problem, delta)
            new_cost = problem_cost(candidate, cfg)
            if new_cost < cost:
                rel = (cost - new_cost) / cost
                problem, cost = candidate, new_cost
                trace.append(cost)
                lam = max(lam * cfg.damping_down, 1e-15)
                accepted = True
                if rel < cfg.cost_tolerance:
                    return LMResult(problem, trace)
                break
            lam *= cfg.damping_up
            if lam > cfg.max_damping:
                raise NonConvergenceError(f"damping exceeded {cfg.max_damping:g}", problem, trace)
        if not accepted:
            break
    return LMResult(problem, trace)


def write_cost_trace(path, traces: Mapping[str, Sequence[float]] | Sequence[float]) -> None:
    """CSV of ``stage,iteration,cost`` rows (stage omitted for a single trace)."""
    if not isinstance(traces, Mapping):
        traces = {"": traces}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "iteration", "cost"])
        for stage, trace in traces.items():
            for i, c in enumerate(trace):
                w.writerow([stage, i, repr(float(c))])


# --------------------------------------------------------------------------
# pipeline stages


@dataclass(frozen=True)
class ScalePrior:
    point_a: int
    point_b: int
    length: float

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError("prior length must be positive")
        if self.point_a == self.point_b:
            raise ValueError("prior endpoints must be distinct points")


class LocalBAResult(NamedTuple):
    pose: PoseSE3
    points: np.ndarray
    cost_trace: list[float]


def local_ba(
    pairs: CorrespondenceSet,
    pose: PoseSE3,
    points,
    k_a: CameraIntrinsics,
    k_b: CameraIntrinsics,
    cfg: LMConfig = LMConfig(),
) -> LocalBAResult:
    """Two-view refinement with camera A fixed and ``||t||`` held at 1.

    ``pairs`` holds pixel coordinates; ``points`` the matching triangulated
    points (one per pair, reference frame).
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(pairs)
    if len(points) != n:
        raise ValueError("one triangulated point per pair is required")
    t = np.asarray(pose.translation)
    unit = PoseSE3(pose.rotation, t / np.linalg.norm(t), metric=False)
    cams = [BACamera(PoseSE3.identity(), k_a, fixed=True), BACamera(unit, k_b, fix_translation_norm=True)]
    w = np.array([p.weight for p in pairs.pairs], dtype=float)
    problem = BAProblem(
        cams,
        points,
        np.r_[np.zeros(n, int), np.ones(n, int)],
        np.r_[np.arange(n), np.arange(n)],
        np.vstack([pairs.a, pairs.b]),
        np.r_[w, w],
    )
    result = lm_minimize(problem, cfg)
    return LocalBAResult(result.problem.cameras[1].pose, result.problem.points, result.cost_trace)


def resolve_scale(pose: PoseSE3, points, prior: ScalePrior | Sequence[ScalePrior]):
    """Fix the metric scale from known-length segments between reconstructed points.

    With several priors the scale factor is the mean of the individual ones.
    Returns ``(metric_pose, scaled_points)``; the rotation is unchanged.
    """
    priors = [prior] if isinstance(prior, ScalePrior) else list(prior)
    if not priors:
        raise DegeneratePriorError("no scale prior given")
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    factors = []
    for p in priors:
        d = float(np.linalg.norm(points[p.point_a] - points[p.point_b]))
        if d < 1e-9:
            raise DegeneratePriorError(f"prior endpoints {p.point_a},{p.point_b} are {d:g} apart")
        factors.append(p.length / d)
    s = float(np.mean(factors))
    return PoseSE3(pose.rotation, np.asarray(pose.translation) * s, metric=True), points * s


def merge_3d_points(per_pair: Mapping[Hashable, Mapping[Hashable, Sequence[float]]]) -> dict:
    """Average the coordinates of every point key over the pairs that saw it."""
    acc: dict = {}
    for pair in sorted(per_pair, key=repr):
        for key, xyz in per_pair[pair].items():
            acc.setdefault(key, []).append(np.asarray(xyz, dtype=float))
    return {key: np.mean(v, axis=0) if len(v) > 1 else v[0].copy() for key, v in acc.items()}


class GlobalBAResult(NamedTuple):
    poses: dict
    points: dict
    cost_trace: list[float]


def global_ba(
    poses: Mapping[int, PoseSE3],
    merged: Mapping[Hashable, Sequence[float]],
    observations: Iterable[tuple],
    intrinsics: Mapping[int, CameraIntrinsics],
    cfg: LMConfig = LMConfig(),
    reference: int | None = None,
) -> GlobalBAResult:
    """Joint refinement of all cameras and merged points.

    ``observations`` are ``(camera_id, point_key, pixel[, weight])``.  The
    reference camera (default: lowest id) is held fixed and the distance to
    the next camera is frozen to pin the global scale.  Points seen by fewer
    than two cameras are left out.
    """
    cam_ids = sorted(poses)
    reference = cam_ids[0] if reference is None else reference
    others = [c for c in cam_ids if c != reference]
    scale_cam = others[0] if others else None
    cam_index = {c: i for i, c in enumerate(cam_ids)}

    obs = [o for o in observations if o[0] in cam_index and o[1] in merged]
    # averaged points can start behind a camera that saw them; drop those views
    front = []
    for o in obs:
        z = (poses[o[0]].rotation @ np.asarray(merged[o[1]], dtype=float) + poses[o[0]].translation)[2]
        front.append(z > 0)
    if not all(front):
        log.warning("global BA: %d observations start behind their camera and are dropped", front.count(False))
        obs = [o for o, f in zip(obs, front) if f]
    views: dict = {}
    for o in obs:
        views.setdefault(o[1], set()).add(o[0])
    keys = [k for k in merged if len(views.get(k, ())) >= 2]
    key_index = {k: i for i, k in enumerate(keys)}
    obs = [o for o in obs if o[1] in key_index]

    cams = [
        BACamera(
            poses[c],
            intrinsics[c],
            fixed=(c == reference),
            fix_translation_norm=(c == scale_cam and np.linalg.norm(poses[c].translation) > 0),
        )
        for c in cam_ids
    ]
    problem = BAProblem(
        cams,
        np.array([merged[k] for k in keys], dtype=float).reshape(-1, 3),
        [cam_index[o[0]] for o in obs],
        [key_index[o[1]] for o in obs],
        np.array([o[2] for o in obs], dtype=float).reshape(-1, 2),
        [o[3] if len(o) > 3 else 1.0 for o in obs],
    )
    result = lm_minimize(problem, cfg)
    out_poses = {c: result.problem.cameras[cam_index[c]].pose for c in cam_ids}
    out_points = {k: result.problem.points[i] for k, i in key_index.items()}
    return GlobalBAResult(out_poses, out_points, result.cost_trace)
