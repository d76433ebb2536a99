"""Calibration phantom geometry in the Phantom coordinate system (mm).

The phantom CS origin sits at one corner of the phantom marker; the container
is the axis-aligned box ``[0, X] x [0, Y] x [0, Z]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import UnknownLabel
from .geom3d import RigidTransform, apply, compose, inverse

Kind = Literal["hemisphere", "point", "multi_wire"]

DEFAULT_CONTAINER = (120.0, 120.0, 80.0)
DEFAULT_RADIUS = 15.0


@dataclass(frozen=True)
class PhantomModel:
    kind: Kind
    features: tuple[tuple[str, tuple[float, float, float]], ...]
    container: tuple[float, float, float] = DEFAULT_CONTAINER
    hemisphere_radius: float | None = None
    # (start, end) segments, multi_wire only
    wires: tuple[tuple[tuple[float, float, float], tuple[float, float, float]], ...] = field(default=())

    def __post_init__(self):
        if self.kind not in ("hemisphere", "point", "multi_wire"):
            raise ValueError(f"unknown phantom kind {self.kind!r}")
        feats = tuple((str(lbl), tuple(float(v) for v in p)) for lbl, p in self.features)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "container", tuple(float(v) for v in self.container))
        if not feats:
            raise ValueError("phantom needs at least one feature")
        labels = [lbl for lbl, _ in feats]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate feature labels in {labels}")
        if any(v <= 0 for v in self.container):
            raise ValueError("container extents must be positive")
        if self.kind == "hemisphere":
            if len(feats) != 1:
                raise ValueError("hemisphere phantom has exactly one feature (the sphere center)")
            if self.hemisphere_radius is None or not self.hemisphere_radius > 0:
                raise ValueError("hemisphere_radius must be > 0")
        for lbl, p in feats:
            if len(p) != 3 or not self._inside(p):
                raise ValueError(f"feature {lbl!r} at {p} lies outside the container {self.container}")

    def _inside(self, p) -> bool:
        return all(0.0 <= v <= ext for v, ext in zip(p, self.container))

    @property
    def labels(self) -> list[str]:
        return [lbl for lbl, _ in self.features]

    def feature(self, label: str | None = None) -> np.ndarray:
        if label is None:
            return np.array(self.features[0][1])
        for lbl, p in self.features:
            if lbl == label:
                return np.array(p)
        raise UnknownLabel(f"no feature labelled {label!r} (have {self.labels})")


def hemisphere_preset(
    radius: float = DEFAULT_RADIUS,
    container=DEFAULT_CONTAINER,
    center=None,
) -> PhantomModel:
    """Hemisphere on a pillar, centered in the box footprint; the sphere center is the landmark."""
    if center is None:
        center = (container[0] / 2, container[1] / 2, 30.0)
    return PhantomModel("hemisphere", (("center", tuple(center)),), tuple(container), float(radius))


def point_preset(container=DEFAULT_CONTAINER) -> PhantomModel:
    """Single pin-head target."""
    return PhantomModel("point", (("pin", (container[0] / 2, container[1] / 2, 30.0)),), tuple(container))


def multi_wire_preset(container=DEFAULT_CONTAINER) -> PhantomModel:
    """Two crossing wires plus two parallel wires; features are the crossing point and wire anchors."""
    X, Y, _ = container
    z_cross, z_par = 30.0, 45.0
    wires = (
        ((10.0, 10.0, z_cross), (X - 10.0, Y - 10.0, z_cross)),
        ((X - 10.0, 10.0, z_cross), (10.0, Y - 10.0, z_cross)),
        ((10.0, Y / 3, z_par), (X - 10.0, Y / 3, z_par)),
        ((10.0, 2 * Y / 3, z_par), (X - 10.0, 2 * Y / 3, z_par)),
    )
    feats = (
        ("cross", (X / 2, Y / 2, z_cross)),
        ("par0", (X / 2, Y / 3, z_par)),
        ("par1", (X / 2, 2 * Y / 3, z_par)),
    )
    return PhantomModel("multi_wire", feats, tuple(container), None, wires)


PRESETS = {
    "hemisphere": hemisphere_preset,
    "point": point_preset,
    "multi_wire": multi_wire_preset,
}


def feature_in_marker_frame(
    m: PhantomModel, label: str | None, T_PC: RigidTransform, T_MC: RigidTransform
) -> np.ndarray:
    """Phantom landmark expressed in the probe-marker frame: ``T_MC^-1 T_PC x_p``."""
    return apply(compose(inverse(T_MC), T_PC), m.feature(label))
