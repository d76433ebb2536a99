"""Rigid and similarity transforms over 3D points.

Rotations are stored as unit quaternions (w, x, y, z); matrices are derived
views. A transform ``T`` maps a point ``p`` to ``T.scale * R @ p + T.translation``.
Naming follows ``T_AB``: maps coordinates expressed in frame A into frame B.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

Point3 = np.ndarray  # shape (3,), mm

_EPS = np.finfo(float).eps


def as_point3(p) -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if arr.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"point has non-finite components: {arr}")
    return arr


@dataclass(frozen=True)
class UnitQuaternion:
    """Rotation quaternion, kept normalized with canonical sign (w >= 0)."""

    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        comps = [float(c) for c in (self.w, self.x, self.y, self.z)]
        if not all(math.isfinite(c) for c in comps):
            raise ValueError(f"non-finite quaternion {comps}")
        n2 = sum(c * c for c in comps)
        if n2 == 0.0:
            raise ValueError("zero quaternion")
        # already-unit values are left bit-identical so text round trips are exact
        if abs(n2 - 1.0) > 8 * _EPS:
            n = math.sqrt(n2)
            comps = [c / n for c in comps]
        for c in comps:
            if c != 0.0:
                if c < 0.0:
                    comps = [-v for v in comps]
                break
        comps = [c + 0.0 for c in comps]  # drop negative zeros
        for name, c in zip("wxyz", comps):
            object.__setattr__(self, name, c)

    @classmethod
    def identity(cls) -> UnitQuaternion:
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> UnitQuaternion:
        axis = np.asarray(axis, dtype=float)
        n = np.linalg.norm(axis)
        if n == 0.0:
            return cls.identity()
        axis = axis / n
        h = 0.5 * angle
        s = math.sin(h)
        return cls(math.cos(h), *(s * axis))

    @classmethod
    def from_rotvec(cls, v) -> UnitQuaternion:
        v = np.asarray(v, dtype=float)
        angle = float(np.linalg.norm(v))
        if angle < 1e-12:
            # second-order expansion keeps tiny rotations accurate
            return cls(1.0 - angle * angle / 8.0, *(0.5 * v))
        return cls.from_axis_angle(v / angle, angle)

    @classmethod
    def from_matrix(cls, m) -> UnitQuaternion:
        """Quaternion of a proper rotation matrix (Shepperd's method)."""
        m = np.asarray(m, dtype=float)
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        diag = (m[0, 0], m[1, 1], m[2, 2])
        k = int(np.argmax((tr, *diag)))
        if k == 0:
            s = 2.0 * math.sqrt(max(1.0 + tr, 0.0))
            q = (0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
        elif k == 1:
            s = 2.0 * math.sqrt(max(1.0 + m[0, 0] - m[1, 1] - m[2, 2], 0.0))
            q = ((m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
        elif k == 2:
            s = 2.0 * math.sqrt(max(1.0 - m[0, 0] + m[1, 1] - m[2, 2], 0.0))
            q = ((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s)
        else:
            s = 2.0 * math.sqrt(max(1.0 - m[0, 0] - m[1, 1] + m[2, 2], 0.0))
            q = ((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s)
        return cls(*q)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def conjugate(self) -> UnitQuaternion:
        return UnitQuaternion(self.w, -self.x, -self.y, -self.z)

    def __mul__(self, other: UnitQuaternion) -> UnitQuaternion:
        w1, x1, y1, z1 = self.w, self.x, self.y, self.z
        w2, x2, y2, z2 = other.w, other.x, other.y, other.z
        return UnitQuaternion(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def dot(self, other: UnitQuaternion) -> float:
        """|<q1, q2>|; 1 means identical rotations."""
        return abs(float(self.as_array() @ other.as_array()))

    def angle(self) -> float:
        return 2.0 * math.atan2(math.sqrt(self.x**2 + self.y**2 + self.z**2), self.w)

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )


@dataclass(frozen=True)
class RigidTransform:
    """Rotation + translation (mm) + uniform scale (1.0 for rigid)."""

    rotation: UnitQuaternion = field(default_factory=UnitQuaternion.identity)
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    scale: float = 1.0

    def __post_init__(self):
        t = tuple(float(v) for v in np.asarray(self.translation, dtype=float).reshape(-1))
        if len(t) != 3 or not all(math.isfinite(v) for v in t):
            raise ValueError(f"translation must be a finite 3-vector, got {self.translation!r}")
        s = float(self.scale)
        if not (s > 0.0 and math.isfinite(s)):
            raise ValueError(f"scale must be positive, got {self.scale!r}")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "scale", s)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    @classmethod
    def from_rt(cls, R, t, scale: float = 1.0) -> RigidTransform:
        return cls(UnitQuaternion.from_matrix(R), tuple(np.asarray(t, dtype=float)), scale)

    @classmethod
    def from_matrix4(cls, m) -> RigidTransform:
        """From a 4x4 homogeneous matrix whose upper block is s*R."""
        m = np.asarray(m, dtype=float)
        A = m[:3, :3]
        s = float(np.cbrt(np.linalg.det(A)))
        return cls.from_rt(A / s, m[:3, 3], s)

    @classmethod
    def translation_only(cls, t) -> RigidTransform:
        return cls(UnitQuaternion.identity(), tuple(t))

    @property
    def t(self) -> np.ndarray:
        return np.array(self.translation)

    @property
    def R(self) -> np.ndarray:
        return self.rotation.to_matrix()

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.scale * self.R
        m[:3, 3] = self.translation
        return m

    def apply(self, p) -> np.ndarray:
        return apply(self, p)

    def inverse(self) -> RigidTransform:
        return inverse(self)

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return compose(self, other)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform equivalent to applying ``b`` first, then ``a``."""
    t = a.scale * (a.R @ b.t) + a.t
    return RigidTransform(a.rotation * b.rotation, tuple(t), a.scale * b.scale)


def inverse(t: RigidTransform) -> RigidTransform:
    q_inv = t.rotation.conjugate()
    s_inv = 1.0 / t.scale
    return RigidTransform(q_inv, tuple(-s_inv * (q_inv.to_matrix() @ t.t)), s_inv)


def apply(t: RigidTransform, p) -> np.ndarray:
    """``s*R*p + t`` for one point (3,) or a stack of points (N, 3)."""
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != 3:
        raise ValueError(f"points must have 3 components, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("points have non-finite components")
    return t.scale * (p @ t.R.T) + t.t


def rotation_about(axis: str, angle: float) -> UnitQuaternion:
    unit = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}[axis]
    return UnitQuaternion.from_axis_angle(unit, angle)


def chain(*transforms: RigidTransform) -> RigidTransform:
    """``chain(A, B, C)`` == ``A @ B @ C``."""
    out = RigidTransform.identity()
    for t in transforms:
        out = compose(out, t)
    return out


def rotation_angle_between(a: UnitQuaternion, b: UnitQuaternion) -> float:
    """Geodesic angle (rad) between two rotations."""
    # atan2 form keeps precision for nearly equal rotations, where acos does not
    rel = a.conjugate() * b
    return 2.0 * math.atan2(math.sqrt(rel.x**2 + rel.y**2 + rel.z**2), abs(rel.w))


def random_rotation(rng: np.random.Generator) -> UnitQuaternion:
    q = rng.normal(size=4)
    return UnitQuaternion(*q)


def random_transform(
    rng: np.random.Generator, max_translation: float = 100.0, scale: float | Sequence[float] = 1.0
) -> RigidTransform:
    if not np.isscalar(scale):
        lo, hi = scale
        scale = float(rng.uniform(lo, hi))
    t = rng.uniform(-max_translation, max_translation, size=3)
    return RigidTransform(random_rotation(rng), tuple(t), scale)
