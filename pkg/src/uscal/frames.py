"""Per-acquisition observation shared by the generator, calibration and I/O."""

from __future__ import annotations

from dataclasses import dataclass

from .bscan import BScanImage
from .geom3d import RigidTransform


@dataclass(frozen=True, eq=False)
class FrameObservation:
    """One tracked B-scan: marker and phantom poses in the camera frame plus the
    detected landmark pixel (None if nothing was detected)."""

    frame_id: int
    T_MC: RigidTransform
    T_PC: RigidTransform
    feature_px: tuple[float, float] | None = None
    bscan: BScanImage | None = None

    def __post_init__(self):
        if self.feature_px is not None:
            u, v = (float(c) for c in self.feature_px)
            object.__setattr__(self, "feature_px", (u, v))
            if self.bscan is not None and not self.bscan.geometry.contains(u, v):
                raise ValueError(f"frame {self.frame_id}: feature pixel {(u, v)} outside the image")
