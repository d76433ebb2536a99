"""Closed-form absolute orientation between corresponded point sets.

``solve_horn`` is the quaternion eigenvector method; ``solve_svd_oracle`` is an
independent cross-covariance SVD (Kabsch/Umeyama) solver that minimizes the
same objective and is used for cross-checking.

Both return the transform ``T`` minimizing ``sum_k ||Q_k - s R P_k - t||^2``,
i.e. ``T`` maps the P frame into the Q frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import DegenerateInput, NumericalFailure
from .geom3d import RigidTransform, UnitQuaternion

Mode = Literal["rigid", "similarity"]

COLLINEAR_RTOL = 1e-9


def _rank2_ok(pts: np.ndarray) -> bool:
    # planar sets are fine (image points all lie on z=0); only collinear ones are not
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    return sv[0] > 0.0 and sv[1] > COLLINEAR_RTOL * sv[0]


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """Paired point sets; row k of ``P`` corresponds to row k of ``Q``."""

    P: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        P = np.array(self.P, dtype=float).reshape(-1, 3) if np.size(self.P) else np.zeros((0, 3))
        Q = np.array(self.Q, dtype=float).reshape(-1, 3) if np.size(self.Q) else np.zeros((0, 3))
        if P.shape != Q.shape:
            raise ValueError(f"P and Q differ in shape: {P.shape} vs {Q.shape}")
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(Q))):
            raise ValueError("correspondences contain non-finite values")
        if len(P) < 3:
            raise DegenerateInput(f"need at least 3 correspondences, got {len(P)}")
        if not _rank2_ok(P):
            raise DegenerateInput("P points are collinear or coincident")
        if not _rank2_ok(Q):
            raise DegenerateInput("Q points are collinear or coincident")
        P.flags.writeable = False
        Q.flags.writeable = False
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "Q", Q)

    @property
    def N(self) -> int:
        return len(self.P)

    def residuals(self, transform: RigidTransform) -> np.ndarray:
        return np.linalg.norm(self.Q - transform.apply(self.P), axis=1)

    def cost(self, transform: RigidTransform) -> float:
        """Sum of squared residuals."""
        return float(np.sum((self.Q - transform.apply(self.P)) ** 2))


@dataclass(frozen=True, eq=False)
class AbsOrientSolution:
    transform: RigidTransform
    rms_residual: float
    per_pair_residuals: np.ndarray


def _finish(c: CorrespondenceSet, R: np.ndarray, s: float, p0, q0) -> AbsOrientSolution:
    # t maps the rotated, scaled P centroid onto the Q centroid
    t = q0 - s * (R @ p0)
    T = RigidTransform.from_rt(R, t, s)
    res = c.residuals(T)
    return AbsOrientSolution(T, float(np.sqrt(np.mean(res**2))), res)


def _scale(Pc: np.ndarray, Qc: np.ndarray, R: np.ndarray) -> float:
    # least-squares scale for fixed R; see decisions on symmetric vs this form
    denom = float(np.sum(Pc * Pc))
    s = float(np.sum(Qc * (Pc @ R.T))) / denom
    if not s > 0.0:
        raise DegenerateInput("estimated scale is not positive")
    return s


def horn_matrix(M: np.ndarray) -> np.ndarray:
    """Horn's symmetric 4x4 matrix built from the cross-covariance ``M = sum p q^T``."""
    Sxx, Sxy, Sxz = M[0]
    Syx, Syy, Syz = M[1]
    Szx, Szy, Szz = M[2]
    return np.array(
        [
            [Sxx + Syy + Szz, Syz - Szy, Szx - Sxz, Sxy - Syx],
            [Syz - Szy, Sxx - Syy - Szz, Sxy + Syx, Szx + Sxz],
            [Szx - Sxz, Sxy + Syx, -Sxx + Syy - Szz, Syz + Szy],
            [Sxy - Syx, Szx + Sxz, Syz + Szy, -Sxx - Syy + Szz],
        ]
    )


def solve_horn(c: CorrespondenceSet, mode: Mode = "rigid") -> AbsOrientSolution:
    """Least-squares transform P -> Q via the unit-quaternion eigenvector method.

    The rotation is the eigenvector of Horn's 4x4 matrix with the largest
    eigenvalue, computed on centroid-relative coordinates. In similarity mode
    the uniform scale is estimated too (7 DoF).
    """
    if mode not in ("rigid", "similarity"):
        raise ValueError(f"unknown mode {mode!r}")
    p0 = c.P.mean(axis=0)
    q0 = c.Q.mean(axis=0)
    Pc = c.P - p0
    Qc = c.Q - q0
    N = horn_matrix(Pc.T @ Qc)
    try:
        evals, evecs = np.linalg.eigh(N)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigen-decomposition failed: {exc}") from exc
    if not np.all(np.isfinite(evecs)):
        raise NumericalFailure("eigen-decomposition produced non-finite values")
    q = UnitQuaternion(*evecs[:, int(np.argmax(evals))])
    R = q.to_matrix()
    s = _scale(Pc, Qc, R) if mode == "similarity" else 1.0
    return _finish(c, R, s, p0, q0)


def solve_svd_oracle(c: CorrespondenceSet, mode: Mode = "rigid") -> AbsOrientSolution:
    """Same problem solved by SVD of the cross-covariance (Kabsch / Umeyama)."""
    if mode not in ("rigid", "similarity"):
        raise ValueError(f"unknown mode {mode!r}")
    p0 = c.P.mean(axis=0)
    q0 = c.Q.mean(axis=0)
    Pc = c.P - p0
    Qc = c.Q - q0
    H = Pc.T @ Qc
    try:
        U, _, Vt = np.linalg.svd(H)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"SVD failed: {exc}") from exc
    d = 1.0 if np.linalg.det(Vt.T @ U.T) >= 0 else -1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    s = _scale(Pc, Qc, R) if mode == "similarity" else 1.0
    return _finish(c, R, s, p0, q0)
