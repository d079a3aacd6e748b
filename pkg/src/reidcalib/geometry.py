"""Two-view epipolar geometry on calibrated (normalized) image coordinates.

Coordinate convention used throughout the package::

    x_cam = R @ x_ref + t

A pose therefore maps reference-frame points into the camera frame.  For a
camera pair (A, B) with A the reference, the essential matrix is
``E = [t]x R`` and correspondences satisfy ``b_h.T @ E @ a_h = 0`` where
``a_h``/``b_h`` are homogeneous normalized coordinates in A and B.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import (
    BehindCameraError,
    CheiralityError,
    DegenerateConfigurationError,
    DistortionConvergenceError,
    InsufficientInliersError,
    LowParallaxError,
)

UNDISTORT_MAX_ITERS = 20
UNDISTORT_STEP_TOL = 1e-12
MIN_PARALLAX_DEG = 0.1

# triangulation status codes
TRI_OK = 0
TRI_BEHIND = 1
TRI_LOW_PARALLAX = 2

log = logging.getLogger(__name__)


def _frozen(a, shape=None) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics with the 5-term radial/tangential distortion model.

    ``dist`` is ``(k1, k2, p1, p2, k3)``.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    dist: np.ndarray = field(default_factory=lambda: np.zeros(5))

    def __post_init__(self):
        object.__setattr__(self, "dist", _frozen(self.dist, (5,)))
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def f_mean(self) -> float:
        return 0.5 * (self.fx + self.fy)

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Intrinsics for the same camera imaged at ``factor`` times the resolution."""
        return CameraIntrinsics(
            self.fx * factor,
            self.fy * factor,
            self.cx * factor,
            self.cy * factor,
            int(round(self.width * factor)),
            int(round(self.height * factor)),
            self.dist,
        )

    def to_dict(self, camera_id=None) -> dict:
        d = {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "dist": [float(x) for x in self.dist],
            "width": self.width,
            "height": self.height,
        }
        if camera_id is not None:
            d = {"id": camera_id, **d}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
            dist=np.asarray(d.get("dist", [0.0] * 5), dtype=float),
        )


@dataclass(frozen=True)
class PoseSE3:
    """Rigid transform from the reference frame into a camera frame."""

    rotation: np.ndarray
    translation: np.ndarray
    metric: bool = True

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _frozen(self.translation, (3,)))

    @classmethod
    def identity(cls, metric: bool = True) -> "PoseSE3":
        return cls(np.eye(3), np.zeros(3), metric)

    @property
    def center(self) -> np.ndarray:
        """Camera center in the reference frame, ``-R.T @ t``."""
        return -self.rotation.T @ self.translation

    @property
    def matrix(self) -> np.ndarray:
        return np.hstack([self.rotation, self.translation[:, None]])

    def transform(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        """``self ∘ other``: first apply ``other``, then ``self``."""
        return PoseSE3(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
            self.metric and other.metric,
        )

    def inverse(self) -> "PoseSE3":
        return PoseSE3(self.rotation.T, -self.rotation.T @ self.translation, self.metric)

    def with_scale(self, s: float, metric: bool = True) -> "PoseSE3":
        return PoseSE3(self.rotation, self.translation * s, metric)

    def check(self, tol: float = 1e-9) -> None:
        R = self.rotation
        if np.abs(R.T @ R - np.eye(3)).max() > tol or abs(np.linalg.det(R) - 1.0) > tol:
            raise ValueError("rotation is not a proper orthonormal matrix")
        if not self.metric and abs(np.linalg.norm(self.translation) - 1.0) > tol:
            raise ValueError("up-to-scale translation must have unit norm")


@dataclass(frozen=True)
class PointPair:
    a: tuple[float, float]
    b: tuple[float, float]
    frame: int = 0
    person_id: int = 0
    weight: float = 1.0


@dataclass
class CorrespondenceSet:
    cam_a: int
    cam_b: int
    pairs: list[PointPair] = field(default_factory=list)

    def __post_init__(self):
        if self.cam_a == self.cam_b:
            raise ValueError("a correspondence set needs two distinct cameras")

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def a(self) -> np.ndarray:
        return np.array([p.a for p in self.pairs], dtype=float).reshape(-1, 2)

    @property
    def b(self) -> np.ndarray:
        return np.array([p.b for p in self.pairs], dtype=float).reshape(-1, 2)

    @property
    def keys(self) -> list[tuple[int, int]]:
        return [(p.person_id, p.frame) for p in self.pairs]

    def subset(self, mask_or_idx) -> "CorrespondenceSet":
        idx = np.arange(len(self.pairs))[np.asarray(mask_or_idx)]
        return CorrespondenceSet(self.cam_a, self.cam_b, [self.pairs[i] for i in idx])


@dataclass(frozen=True)
class RansacConfig:
    threshold_px: float = 2.0
    confidence: float = 0.999
    max_iters: int = 2000
    seed: int = 0
    solver: str = "8point"


# --------------------------------------------------------------------------
# small Lie-group helpers


def skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def exp_so3(w) -> np.ndarray:
    """Rodrigues formula."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    W = skew(w)
    if theta < 1e-8:
        return np.eye(3) + W + 0.5 * W @ W
    return np.eye(3) + math.sin(theta) / theta * W + (1 - math.cos(theta)) / theta**2 * W @ W


def rotation_angle(R) -> float:
    """Geodesic angle of a rotation matrix in radians."""
    R = np.asarray(R, dtype=float)
    s = 0.5 * np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    c = 0.5 * (np.trace(R) - 1.0)
    return math.atan2(s, c)


def look_at(center, target, up=(0.0, 0.0, 1.0)) -> PoseSE3:
    """Pose of a camera at ``center`` whose optical axis passes through ``target``.

    Camera axes follow the x-right, y-down, z-forward convention.
    """
    center = np.asarray(center, dtype=float)
    z = np.asarray(target, dtype=float) - center
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=float))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.vstack([x, y, z])
    return PoseSE3(R, -R @ center)


# --------------------------------------------------------------------------
# distortion / normalization


def distort_normalized(xy, dist) -> np.ndarray:
    """Apply the forward (k1, k2, p1, p2, k3) model to normalized points."""
    xy = np.asarray(xy, dtype=float)
    k1, k2, p1, p2, k3 = np.asarray(dist, dtype=float)
    x, y = xy[..., 0], xy[..., 1]
    r2 = x * x + y * y
    radial = 1 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = x * radial + 2 * p1 * x * y + p2 * (r2 + 2 * x * x)
    yd = y * radial + p1 * (r2 + 2 * y * y) + 2 * p2 * x * y
    return np.stack([xd, yd], axis=-1)


def undistort_points(pts, k: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates to normalized coordinates, vectorized.

    Returns ``(normalized, ok)``; ``ok`` is False where the fixed-point inverse
    of the distortion did not converge within 20 iterations.
    """
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    xd = np.stack([(pts[:, 0] - k.cx) / k.fx, (pts[:, 1] - k.cy) / k.fy], axis=1)
    ok = np.all(np.isfinite(xd), axis=1)
    if not np.any(k.dist):
        return xd, ok
    k1, k2, p1, p2, k3 = k.dist
    x = xd.copy()
    converged = np.zeros(len(x), dtype=bool)
    for _ in range(UNDISTORT_MAX_ITERS):
        u, v = x[:, 0], x[:, 1]
        r2 = u * u + v * v
        radial = 1 + r2 * (k1 + r2 * (k2 + r2 * k3))
        dx = 2 * p1 * u * v + p2 * (r2 + 2 * u * u)
        dy = p1 * (r2 + 2 * v * v) + 2 * p2 * u * v
        new = np.stack([(xd[:, 0] - dx) / radial, (xd[:, 1] - dy) / radial], axis=1)
        step = np.abs(new - x).max(axis=1)
        x = np.where(converged[:, None], x, new)
        converged |= step < UNDISTORT_STEP_TOL
        if converged.all():
            break
    ok &= converged & np.all(np.isfinite(x), axis=1)
    return x, ok


def undistort_normalize(pt, k: CameraIntrinsics) -> np.ndarray:
    """Single-point version of :func:`undistort_points`; raises on failure."""
    if not np.all(np.isfinite(pt)):
        raise ValueError("pixel coordinates must be finite")
    x, ok = undistort_points(pt, k)
    if not ok[0]:
        raise DistortionConvergenceError(f"inverse distortion did not converge for {tuple(pt)}")
    return x[0]


# --------------------------------------------------------------------------
# essential matrix


def _hartley(x: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=0)
    rms = math.sqrt(np.mean(np.sum((x - mean) ** 2, axis=1)))
    if rms < 1e-12:
        raise DegenerateConfigurationError("all points coincide")
    s = math.sqrt(2.0) / rms
    return np.array([[s, 0.0, -s * mean[0]], [0.0, s, -s * mean[1]], [0.0, 0.0, 1.0]])


def enforce_essential(E: np.ndarray) -> np.ndarray:
    """Project onto the essential manifold with singular values (1, 1, 0).

    The Frobenius norm of the result is sqrt(2).
    """
    U, S, Vt = np.linalg.svd(E)
    if S[0] <= 0:
        raise DegenerateConfigurationError("zero essential matrix")
    sigma = 0.5 * (S[0] + S[1])
    E = U @ np.diag([sigma, sigma, 0.0]) @ Vt
    return E / sigma


def estimate_essential(a, b) -> np.ndarray:
    """Normalized 8-point estimate of E from >= 8 normalized correspondences."""
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    n = len(a)
    if n < 8 or len(b) != n:
        raise DegenerateConfigurationError(f"need at least 8 pairs, got {n}")
    Ta, Tb = _hartley(a), _hartley(b)
    ah = np.hstack([a, np.ones((n, 1))]) @ Ta.T
    bh = np.hstack([b, np.ones((n, 1))]) @ Tb.T
    A = (bh[:, :, None] * ah[:, None, :]).reshape(n, 9)
    _, S, Vt = np.linalg.svd(A, full_matrices=True)
    # rank of the design matrix must be 8 for a unique solution
    if S[7] < 1e-10 * S[0]:
        raise DegenerateConfigurationError("design matrix is rank deficient")
    E = Tb.T @ Vt[-1].reshape(3, 3) @ Ta
    return enforce_essential(E)


def _five_point_tables():
    # monomial v_i v_j v_k over v = (x, y, z, 1) -> (column of the x/y monomial, power of z)
    cols = {(3, 0): 0, (2, 1): 1, (1, 2): 2, (0, 3): 3, (2, 0): 4, (1, 1): 5, (0, 2): 6, (1, 0): 7, (0, 1): 8, (0, 0): 9}
    col = np.empty((4, 4, 4), dtype=int)
    zpow = np.empty((4, 4, 4), dtype=int)
    for i in range(4):
        for j in range(4):
            for k in range(4):
                e = np.bincount([i, j, k], minlength=4)
                col[i, j, k] = cols[(e[0], e[1])]
                zpow[i, j, k] = e[2]
    return col.ravel(), zpow.ravel()


_FP_COL, _FP_ZPOW = _five_point_tables()


def estimate_essential_5point(a, b) -> list[np.ndarray]:
    """Minimal five-point solver (hidden-variable resultant in z).

    With E = xX + yY + zZ + W spanning the null space of the five epipolar
    constraints, the cubic rank and trace constraints become a 10x10 matrix
    polynomial C(z) acting on the x/y monomials.  Its roots come from the
    linearized 30x30 generalized eigenproblem.  Up to ten real solutions are
    returned, each with unit Frobenius norm scaled to sqrt(2).
    """
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    if len(a) < 5:
        raise DegenerateConfigurationError("five-point solver needs 5 pairs")
    ah = np.hstack([a, np.ones((len(a), 1))])
    bh = np.hstack([b, np.ones((len(b), 1))])
    Q = np.einsum("ni,nj->nij", bh, ah).reshape(len(a), 9)
    _, S, Vt = np.linalg.svd(Q)
    if S[4] < 1e-10 * S[0]:
        raise DegenerateConfigurationError("five-point sample is rank deficient")
    basis = Vt[5:9].reshape(4, 3, 3)  # order x, y, z, w

    EEt = np.einsum("iab,jcb->ijac", basis, basis)
    tr = np.einsum("ijaa->ij", EEt)
    M = 2 * np.einsum("ijab,kbc->ijkac", EEt, basis) - np.einsum("ij,kac->ijkac", tr, basis)
    D = np.einsum("ia,jb,kc,abc->ijk", basis[:, 0], basis[:, 1], basis[:, 2], _LEVI_CIVITA)
    eqs = np.concatenate([M.reshape(64, 9), D.reshape(64, 1)], axis=1).T  # (10, 64)
    C = np.zeros((4, 10, 10))
    for q in range(10):
        np.add.at(C, (_FP_ZPOW, q, _FP_COL), eqs[q])

    n = 10
    I = np.eye(n)
    Z = np.zeros((n, n))
    A = np.block([[Z, I, Z], [Z, Z, I], [-C[0], -C[1], -C[2]]])
    B = np.block([[I, Z, Z], [Z, I, Z], [Z, Z, C[3]]])
    from scipy.linalg import eig

    w, V = eig(A, B)
    out = []
    for val, vec in zip(w, V.T):
        if not np.isfinite(val) or abs(val.imag) > 1e-8 * max(1.0, abs(val.real)):
            continue
        m = vec[:n].real
        if abs(m[9]) < 1e-12 * np.abs(m).max():
            continue
        x, y, z = m[7] / m[9], m[8] / m[9], val.real
        E = x * basis[0] + y * basis[1] + z * basis[2] + basis[3]
        norm = np.linalg.norm(E)
        if norm > 0 and np.isfinite(norm):
            out.append(E * (math.sqrt(2.0) / norm))
    return out


_LEVI_CIVITA = np.zeros((3, 3, 3))
for _p, _s in (((0, 1, 2), 1), ((1, 2, 0), 1), ((2, 0, 1), 1), ((0, 2, 1), -1), ((2, 1, 0), -1), ((1, 0, 2), -1)):
    _LEVI_CIVITA[_p] = _s


# name -> (minimal sample size, solver returning a list of candidate E)
ESSENTIAL_SOLVERS: dict[str, tuple[int, Callable[[np.ndarray, np.ndarray], list[np.ndarray]]]] = {
    "8point": (8, lambda a, b: [estimate_essential(a, b)]),
    "5point": (5, estimate_essential_5point),
}


def estimate_essential_candidates(a, b, solver: str = "8point") -> list[np.ndarray]:
    if solver not in ESSENTIAL_SOLVERS:
        raise ValueError(f"unknown essential solver {solver!r}")
    return ESSENTIAL_SOLVERS[solver][1](a, b)


def epipolar_residual(E, a, b) -> np.ndarray:
    """Algebraic residual ``b_h.T E a_h`` for each pair."""
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    ah = np.hstack([a, np.ones((len(a), 1))])
    bh = np.hstack([b, np.ones((len(b), 1))])
    return np.einsum("ni,ij,nj->n", bh, E, ah)


def sampson_distance(E, a, b) -> np.ndarray:
    """First-order geometric distance of pairs to the epipolar variety.

    Works on normalized coordinates; the value is in the same units.  Where the
    gradient of the constraint vanishes the algebraic residual is returned.
    """
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    ah = np.hstack([a, np.ones((len(a), 1))])
    bh = np.hstack([b, np.ones((len(b), 1))])
    Ea = ah @ E.T
    Etb = bh @ E
    r = np.sum(bh * Ea, axis=1)
    g2 = Ea[:, 0] ** 2 + Ea[:, 1] ** 2 + Etb[:, 0] ** 2 + Etb[:, 1] ** 2
    out = np.abs(r)
    nz = g2 > 0
    out[nz] = np.abs(r[nz]) / np.sqrt(g2[nz])
    return out


def _ransac_iterations(inlier_ratio: float, sample_size: int, confidence: float) -> float:
    if inlier_ratio <= 0:
        return math.inf
    p_good = inlier_ratio**sample_size
    if p_good >= 1.0:
        return 1.0
    denom = math.log1p(-p_good)
    return math.inf if denom == 0.0 else math.log1p(-confidence) / denom


def ransac_essential_normalized(a, b, threshold: float, cfg: RansacConfig = RansacConfig(), anchors=None):
    """RANSAC over normalized coordinates with a normalized-units threshold.

    Returns ``(E, inlier_mask)``.  Every pair flagged as inlier has a Sampson
    distance strictly below ``threshold`` under the returned ``E``.

    ``anchors`` is an optional ``(a, b)`` pair of trusted correspondences,
    such as annotated off-plane points.  Hypotheses that put any anchor
    beyond the threshold are rejected, which resolves the two-fold ambiguity
    of near-planar point sets.  If no hypothesis satisfies them the anchors
    are ignored.
    """
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    n = len(a)
    sample_size = ESSENTIAL_SOLVERS[cfg.solver][0] if cfg.solver in ESSENTIAL_SOLVERS else 8
    if n < max(sample_size, 8):
        raise InsufficientInliersError(f"only {n} pairs available, need {max(sample_size, 8)}")
    rng = np.random.default_rng(cfg.seed)
    if anchors is not None:
        anc_a = np.asarray(anchors[0], dtype=float).reshape(-1, 2)
        anc_b = np.asarray(anchors[1], dtype=float).reshape(-1, 2)
        if len(anc_a) == 0:
            anchors = None

    best_E, best_mask, best_count, best_mean = None, None, -1, math.inf
    fallback = [None, None, -1, math.inf]

    def consider(E):
        nonlocal best_E, best_mask, best_count, best_mean
        d = sampson_distance(E, a, b)
        if anchors is not None and sampson_distance(E, anc_a, anc_b).max() >= threshold:
            count = int((d < threshold).sum())
            if count > fallback[2]:
                fallback[:] = [E, d < threshold, count, 0.0]
            return
        mask = d < threshold
        count = int(mask.sum())
        mean = float(d[mask].mean()) if count else math.inf
        if count > best_count or (count == best_count and mean < best_mean):
            best_E, best_mask, best_count, best_mean = E, mask, count, mean

    needed = float(cfg.max_iters)
    it = 0
    while it < min(needed, cfg.max_iters):
        it += 1
        idx = rng.choice(n, sample_size, replace=False)
        try:
            candidates = estimate_essential_candidates(a[idx], b[idx], cfg.solver)
        except DegenerateConfigurationError:
            continue
        for E in candidates:
            consider(E)
        needed = _ransac_iterations(best_count / n, sample_size, cfg.confidence)

    if best_count < 8 and anchors is not None and fallback[2] >= 8:
        log.warning("no hypothesis agrees with the anchor points; ignoring them")
        best_E, best_mask, best_count = fallback[0], fallback[1], fallback[2]
        anchors = None
    if best_count < 8:
        raise InsufficientInliersError(f"best hypothesis has {max(best_count, 0)} inliers, need 8")

    # refine on the consensus set; keep refinements that do not lose support
    E, mask = best_E, best_mask
    for _ in range(3):
        try:
            if anchors is None:
                E_ref = refine_essential(E, a[mask], b[mask])
            else:
                E_ref = refine_essential(E, np.vstack([a[mask], anc_a]), np.vstack([b[mask], anc_b]))
        except DegenerateConfigurationError:
            break
        m_ref = sampson_distance(E_ref, a, b) < threshold
        if m_ref.sum() < mask.sum():
            break
        converged = np.array_equal(m_ref, mask)
        E, mask = E_ref, m_ref
        if converged:
            break
    return E, mask


def _essential_factors(E):
    U, _, Vt = np.linalg.svd(E)
    # the third singular vector pair multiplies a zero, so flipping it keeps E
    if np.linalg.det(U) < 0:
        U[:, 2] *= -1
    if np.linalg.det(Vt) < 0:
        Vt[2] *= -1
    return U, Vt


def refine_essential(E, a, b, max_nfev: int = 50) -> np.ndarray:
    """Minimize the signed Sampson residuals over the essential manifold.

    ``E = U diag(1, 1, 0) V^T`` is updated as ``U exp(w1)``, ``V exp(w2)``.
    A joint rotation about the third axis leaves E unchanged, so the third
    component of ``w2`` is held at zero.
    """
    from scipy.optimize import least_squares

    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    if len(a) < 8:
        raise DegenerateConfigurationError("refinement needs at least 8 pairs")
    U0, Vt0 = _essential_factors(E)
    D = np.diag([1.0, 1.0, 0.0])
    ah = np.hstack([a, np.ones((len(a), 1))])
    bh = np.hstack([b, np.ones((len(b), 1))])

    def build(x):
        return (U0 @ exp_so3(x[:3])) @ D @ (Vt0.T @ exp_so3([x[3], x[4], 0.0])).T

    def residual(x):
        Ex = build(x)
        Ea = ah @ Ex.T
        Etb = bh @ Ex
        r = np.einsum("ni,ni->n", bh, Ea)
        g = np.sqrt(Ea[:, 0] ** 2 + Ea[:, 1] ** 2 + Etb[:, 0] ** 2 + Etb[:, 1] ** 2)
        return r / np.where(g > 0, g, 1.0)

    # trf rather than MINPACK: its result is bit-reproducible across calls
    sol = least_squares(residual, np.zeros(5), method="trf", max_nfev=max_nfev)
    if not np.all(np.isfinite(sol.x)):
        raise DegenerateConfigurationError("refinement diverged")
    out = build(sol.x)
    return out * (math.sqrt(2.0) / np.linalg.norm(out))


def ransac_essential(
    corr: CorrespondenceSet,
    k_a: CameraIntrinsics,
    k_b: CameraIntrinsics,
    cfg: RansacConfig = RansacConfig(),
    anchors=None,
):
    """Robust essential matrix for one camera pair of pixel correspondences.

    The pixel threshold of ``cfg`` is converted to normalized units by the mean
    focal length of both cameras.  Pairs whose undistortion fails are reported
    as outliers.  ``anchors`` holds optional trusted pixel pairs ``(a, b)``.
    """
    na, ok_a = undistort_points(corr.a, k_a)
    nb, ok_b = undistort_points(corr.b, k_b)
    ok = ok_a & ok_b
    if ok.sum() < 8:
        raise InsufficientInliersError(
            f"cameras ({corr.cam_a}, {corr.cam_b}): only {int(ok.sum())} usable pairs after normalization"
        )
    f_mean = 0.5 * (k_a.f_mean + k_b.f_mean)
    if anchors is not None:
        anc_a, ok_aa = undistort_points(np.asarray(anchors[0], dtype=float).reshape(-1, 2), k_a)
        anc_b, ok_ab = undistort_points(np.asarray(anchors[1], dtype=float).reshape(-1, 2), k_b)
        anchors = (anc_a[ok_aa & ok_ab], anc_b[ok_aa & ok_ab])
    E, sub_mask = ransac_essential_normalized(na[ok], nb[ok], cfg.threshold_px / f_mean, cfg, anchors)
    mask = np.zeros(len(corr), dtype=bool)
    mask[np.flatnonzero(ok)[sub_mask]] = True
    return E, mask


# --------------------------------------------------------------------------
# decomposition and triangulation

_W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def pose_candidates(E) -> list[tuple[np.ndarray, np.ndarray]]:
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    R1 = U @ _W @ Vt
    R2 = U @ _W.T @ Vt
    t = U[:, 2] / np.linalg.norm(U[:, 2])
    return [(R1, t), (R1, -t), (R2, t), (R2, -t)]


def _dlt_rows(a, b, Pa, Pb):
    return np.stack(
        [
            a[:, 0, None] * Pa[2] - Pa[0],
            a[:, 1, None] * Pa[2] - Pa[1],
            b[:, 0, None] * Pb[2] - Pb[0],
            b[:, 1, None] * Pb[2] - Pb[1],
        ],
        axis=1,
    )


def _dlt(a: np.ndarray, b: np.ndarray, Pa: np.ndarray, Pb: np.ndarray) -> np.ndarray:
    """Batched linear triangulation; returns homogeneous 4-vectors."""
    rows = _dlt_rows(a, b, Pa, Pb)
    rows /= np.linalg.norm(rows, axis=2, keepdims=True)
    _, _, Vt = np.linalg.svd(rows)
    return Vt[:, -1, :]


def _dlt_reweighted(a, b, Pa, Pb, iters: int = 4) -> np.ndarray:
    """Iterative linear triangulation.

    Each row pair is divided by the current depth estimate in its camera,
    so the algebraic residual approaches the image-plane error.
    """
    Xh = _dlt(a, b, Pa, Pb)
    rows = _dlt_rows(a, b, Pa, Pb)
    for _ in range(iters):
        w = Xh[:, 3:4]
        ok = np.abs(w[:, 0]) > 1e-12
        X = np.where(ok[:, None], Xh / np.where(ok, w[:, 0], 1.0)[:, None], Xh)
        za = X @ Pa[2]
        zb = X @ Pb[2]
        use = ok & (za > 0) & (zb > 0)
        if not use.any():
            break
        scale = np.ones((len(a), 4))
        scale[use, :2] = 1.0 / za[use, None]
        scale[use, 2:] = 1.0 / zb[use, None]
        _, _, Vt = np.linalg.svd(rows * scale[:, :, None])
        Xh = np.where(use[:, None], Vt[:, -1, :], Xh)
    return Xh


def triangulate_points(a, b, pose_b: PoseSE3, pose_a: PoseSE3 | None = None):
    """Vectorized linear triangulation (depth-reweighted DLT) in the reference frame.

    Returns ``(points, status)`` where ``status`` is ``TRI_OK``, ``TRI_BEHIND``
    or ``TRI_LOW_PARALLAX`` per pair.
    """
    pose_a = pose_a or PoseSE3.identity()
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    n = len(a)
    ones = np.ones((n, 1))
    ray_a = np.hstack([a, ones]) @ pose_a.rotation
    ray_b = np.hstack([b, ones]) @ pose_b.rotation
    cos = np.sum(ray_a * ray_b, axis=1)
    sin = np.linalg.norm(np.cross(ray_a, ray_b), axis=1)
    angle = np.degrees(np.arctan2(sin, cos))

    Xh = _dlt_reweighted(a, b, pose_a.matrix, pose_b.matrix)
    with np.errstate(divide="ignore", invalid="ignore"):
        X = Xh[:, :3] / Xh[:, 3:4]
    za = X @ pose_a.rotation[2] + pose_a.translation[2]
    zb = X @ pose_b.rotation[2] + pose_b.translation[2]

    status = np.full(n, TRI_OK, dtype=int)
    status[~(np.isfinite(za) & np.isfinite(zb)) | (za <= 0) | (zb <= 0)] = TRI_BEHIND
    status[angle < MIN_PARALLAX_DEG] = TRI_LOW_PARALLAX
    return X, status


def triangulate(a, b, pose_b: PoseSE3, pose_a: PoseSE3 | None = None) -> np.ndarray:
    """Triangulate one normalized pair; the result is in the reference frame."""
    X, status = triangulate_points(a, b, pose_b, pose_a)
    if status[0] == TRI_LOW_PARALLAX:
        raise LowParallaxError("viewing rays are nearly parallel")
    if status[0] == TRI_BEHIND:
        raise BehindCameraError("triangulated point lies behind a camera")
    return X[0]


def decompose_essential(E, a, b) -> PoseSE3:
    """Pick the (R, t) candidate of ``E`` with most points in front of both cameras."""
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    if len(a) < 1:
        raise CheiralityError("no pairs to test cheirality")
    best, best_count = None, -1
    ident = np.hstack([np.eye(3), np.zeros((3, 1))])
    for R, t in pose_candidates(E):
        pose = PoseSE3(R, t, metric=False)
        Xh = _dlt(a, b, ident, pose.matrix)
        # depth signs from homogeneous coordinates, robust to points near infinity
        za = Xh[:, 2] * Xh[:, 3]
        zb = (Xh @ pose.matrix[2]) * Xh[:, 3]
        count = int(np.sum((za > 0) & (zb > 0)))
        if count > best_count:
            best, best_count = pose, count
    if best_count <= 0.5 * len(a):
        raise CheiralityError(f"best candidate keeps only {best_count}/{len(a)} points in front")
    return best


# --------------------------------------------------------------------------
# projection


def project_points(points, pose: PoseSE3, k: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Project reference-frame points; returns ``(pixels, depth)``.

    Pixels of points with non-positive depth are NaN.
    """
    Xc = pose.transform(np.asarray(points, dtype=float).reshape(-1, 3))
    z = Xc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        xy = Xc[:, :2] / z[:, None]
    xy[z <= 0] = np.nan
    xd = distort_normalized(xy, k.dist)
    uv = np.stack([k.fx * xd[:, 0] + k.cx, k.fy * xd[:, 1] + k.cy], axis=1)
    return uv, z


def project(point, pose: PoseSE3, k: CameraIntrinsics) -> np.ndarray:
    uv, z = project_points(point, pose, k)
    if not z[0] > 0:
        raise BehindCameraError("point has non-positive depth")
    return uv[0]


def essential_from_pose(pose: PoseSE3) -> np.ndarray:
    return skew(pose.translation) @ pose.rotation


def normalize_pairs(pairs: Sequence[PointPair], k_a: CameraIntrinsics, k_b: CameraIntrinsics):
    """Undistort both sides of a list of pixel pairs; returns ``(a, b, ok)``."""
    a, ok_a = undistort_points([p.a for p in pairs], k_a)
    b, ok_b = undistort_points([p.b for p in pairs], k_b)
    return a, b, ok_a & ok_b
