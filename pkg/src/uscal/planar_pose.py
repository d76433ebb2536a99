"""Pose of a planar fiducial (checkerboard grid or marker quad) from one image.

Pinhole model without distortion; observations are assumed undistorted. The
pose is initialised from a normalized-DLT plane homography and refined by
damped Gauss-Newton (Levenberg-Marquardt) on the total squared reprojection
error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, DegenerateTarget, DivergedRefinement
from .geom3d import RigidTransform, UnitQuaternion, rotation_angle_between


@dataclass(frozen=True)
class CameraIntrinsics:
    f_x: float
    f_y: float
    c_x: float
    c_y: float
    width: int | None = None
    height: int | None = None

    def __post_init__(self):
        if not (self.f_x > 0 and self.f_y > 0):
            raise ValueError("focal lengths must be positive")
        if self.width is not None and not 0 <= self.c_x < self.width:
            raise ValueError("principal point outside the image")
        if self.height is not None and not 0 <= self.c_y < self.height:
            raise ValueError("principal point outside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.f_x, 0.0, self.c_x], [0.0, self.f_y, self.c_y], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class PlanarTarget:
    points: np.ndarray  # (N, 3), z = 0, board frame (mm)
    layout: str = "custom"

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 3)
        if len(pts) < 4:
            raise DegenerateTarget(f"need at least 4 target points, got {len(pts)}")
        if np.any(pts[:, 2] != 0.0):
            raise ValueError("planar target points must have z = 0")
        sv = np.linalg.svd(pts[:, :2] - pts[:, :2].mean(axis=0), compute_uv=False)
        if sv[0] == 0.0 or sv[1] <= 1e-9 * sv[0]:
            raise DegenerateTarget("target points are collinear")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @classmethod
    def checkerboard(cls, rows: int, cols: int, square: float) -> PlanarTarget:
        """Inner-corner grid, row-major, origin at the first corner."""
        jj, ii = np.meshgrid(np.arange(cols), np.arange(rows))
        pts = np.column_stack([jj.ravel() * square, ii.ravel() * square, np.zeros(rows * cols)])
        return cls(pts, f"checkerboard {rows}x{cols} @ {square} mm")

    @classmethod
    def quad(cls, size: float) -> PlanarTarget:
        """Four marker corners, clockwise from the top-left."""
        pts = np.array([[0.0, 0.0, 0.0], [size, 0.0, 0.0], [size, size, 0.0], [0.0, size, 0.0]])
        return cls(pts, f"quad {size} mm")

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True, eq=False)
class PoseEstimate:
    pose: RigidTransform  # target -> camera
    rms_reprojection: float  # px
    iterations: int
    cost_history: list[float] = field(default_factory=list)  # accepted costs, initial first


def project_points(intr: CameraIntrinsics, pose: RigidTransform, pts) -> np.ndarray:
    """Pinhole projection of (N, 3) target points; returns (N, 2) pixels."""
    X = pose.apply(np.asarray(pts, dtype=float).reshape(-1, 3))
    Z = X[:, 2]
    if np.any(Z <= 0):
        raise BehindCamera(f"{int(np.sum(Z <= 0))} point(s) at or behind the camera plane")
    return np.column_stack([intr.f_x * X[:, 0] / Z + intr.c_x, intr.f_y * X[:, 1] / Z + intr.c_y])


def project(intr: CameraIntrinsics, pose: RigidTransform, p) -> tuple[float, float]:
    uv = project_points(intr, pose, p)[0]
    return float(uv[0]), float(uv[1])


def _normalizer(pts: np.ndarray) -> np.ndarray:
    c = pts.mean(axis=0)
    d = np.mean(np.linalg.norm(pts - c, axis=1))
    s = np.sqrt(2.0) / d
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def homography_dlt(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Normalized DLT homography mapping 2D ``src`` onto ``dst`` (both (N, 2), N >= 4)."""
    Ts, Td = _normalizer(src), _normalizer(dst)
    s = (Ts @ np.column_stack([src, np.ones(len(src))]).T).T
    d = (Td @ np.column_stack([dst, np.ones(len(dst))]).T).T
    rows = []
    for (x, y, _), (u, v, _) in zip(s, d):
        rows.append([-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u])
        rows.append([0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v])
    _, _, Vt = np.linalg.svd(np.array(rows))
    Hn = Vt[-1].reshape(3, 3)
    H = np.linalg.inv(Td) @ Hn @ Ts
    return H / H[2, 2] if abs(H[2, 2]) > 1e-15 else H


def pose_from_homography(intr: CameraIntrinsics, H: np.ndarray, target: PlanarTarget) -> RigidTransform:
    """Decompose ``K^-1 H = lambda [r1 r2 t]``; the sign puts the target in front of the camera."""
    M = np.linalg.inv(intr.K) @ H
    lam = 2.0 / (np.linalg.norm(M[:, 0]) + np.linalg.norm(M[:, 1]))
    M = lam * M
    if M[2, 2] < 0:
        M = -M
    r1, r2, t = M[:, 0], M[:, 1], M[:, 2]
    R = np.column_stack([r1, r2, np.cross(r1, r2)])
    U, _, Vt = np.linalg.svd(R)
    R = U @ np.diag([1.0, 1.0, np.linalg.det(U @ Vt)]) @ Vt
    pose = RigidTransform.from_rt(R, t)
    if np.any(pose.apply(target.points)[:, 2] <= 0):
        raise DegenerateTarget("homography decomposition puts target points behind the camera")
    return pose


def _residuals(intr, R, t, pts, obs):
    X = pts @ R.T + t
    Z = X[:, 2]
    if np.any(Z <= 0):
        return None, X
    uv = np.column_stack([intr.f_x * X[:, 0] / Z + intr.c_x, intr.f_y * X[:, 1] / Z + intr.c_y])
    return (uv - obs).ravel(), X


def _jacobian(intr, R, t, pts, X):
    n = len(pts)
    Z = X[:, 2]
    dpi = np.zeros((n, 2, 3))
    dpi[:, 0, 0] = intr.f_x / Z
    dpi[:, 0, 2] = -intr.f_x * X[:, 0] / Z**2
    dpi[:, 1, 1] = intr.f_y / Z
    dpi[:, 1, 2] = -intr.f_y * X[:, 1] / Z**2
    # left perturbation R <- exp(w) R: dX/dw = -[R p]_x
    Rp = pts @ R.T
    skew = np.zeros((n, 3, 3))
    skew[:, 0, 1], skew[:, 0, 2] = -Rp[:, 2], Rp[:, 1]
    skew[:, 1, 0], skew[:, 1, 2] = Rp[:, 2], -Rp[:, 0]
    skew[:, 2, 0], skew[:, 2, 1] = -Rp[:, 1], Rp[:, 0]
    dX = np.concatenate([-skew, np.broadcast_to(np.eye(3), (n, 3, 3))], axis=2)
    return np.einsum("nij,njk->nik", dpi, dX).reshape(2 * n, 6)


def refine_pose(
    intr: CameraIntrinsics,
    target: PlanarTarget,
    obs: np.ndarray,
    init: RigidTransform,
    max_iter: int = 100,
    step_tol: float = 1e-10,
    max_damping: float = 1e16,
) -> PoseEstimate:
    pts = target.points
    q, t = init.rotation, init.t
    r, X = _residuals(intr, q.to_matrix(), t, pts, obs)
    if r is None:
        raise BehindCamera("initial pose puts target points behind the camera")
    cost = float(r @ r)
    history = [cost]
    lam = 1e-3
    it = 0
    while it < max_iter:
        it += 1
        R = q.to_matrix()
        J = _jacobian(intr, R, t, pts, X)
        g = J.T @ r
        A = J.T @ J
        diag = np.diag(A).copy()
        accepted = False
        while lam <= max_damping:
            try:
                delta = np.linalg.solve(A + lam * np.diag(np.maximum(diag, 1e-12)), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            q_new = UnitQuaternion.from_rotvec(delta[:3]) * q
            t_new = t + delta[3:]
            r_new, X_new = _residuals(intr, q_new.to_matrix(), t_new, pts, obs)
            if r_new is not None:
                cost_new = float(r_new @ r_new)
                if cost_new <= cost:
                    q, t, r, X, cost = q_new, t_new, r_new, X_new, cost_new
                    history.append(cost)
                    lam = max(lam / 10.0, 1e-12)
                    accepted = True
                    break
            lam *= 10.0
        if not accepted:
            # no descent even with a vanishing step: either at the optimum or broken
            if np.linalg.norm(g) <= 1e-6 * (1.0 + cost):
                break
            raise DivergedRefinement(f"cost {cost:.6g} cannot be reduced at maximum damping")
        if np.linalg.norm(delta) < step_tol:
            break
    pose = RigidTransform(q, tuple(t))
    return PoseEstimate(pose, float(np.sqrt(cost / len(pts))), it, history)


def estimate_pose(
    intr: CameraIntrinsics,
    target: PlanarTarget,
    observations,
    max_iter: int = 100,
    step_tol: float = 1e-10,
) -> PoseEstimate:
    """Target-to-camera pose from >= 4 corner observations (pixels), in target order."""
    obs = np.asarray(observations, dtype=float).reshape(-1, 2)
    if len(obs) != len(target):
        raise ValueError(f"{len(obs)} observations for {len(target)} target points")
    if not np.all(np.isfinite(obs)):
        raise ValueError("observations contain non-finite values")
    sv = np.linalg.svd(obs - obs.mean(axis=0), compute_uv=False)
    if sv[0] == 0.0 or sv[1] <= 1e-9 * sv[0]:
        raise DegenerateTarget("observed corners are collinear")
    H = homography_dlt(target.points[:, :2], obs)
    init = pose_from_homography(intr, H, target)
    return refine_pose(intr, target, obs, init, max_iter, step_tol)


def pose_error(a: RigidTransform, b: RigidTransform) -> tuple[float, float]:
    """(rotation angle in rad, translation distance in mm) between two poses."""
    return rotation_angle_between(a.rotation, b.rotation), float(np.linalg.norm(a.t - b.t))
