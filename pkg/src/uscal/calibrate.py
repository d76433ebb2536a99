"""Probe calibration: correspondences, closed-form solve, backprojection error.

Frame chain (``T_AB`` maps A-coordinates into B):

    phantom point = T_PC^-1  T_MC  T_UM  (s_x u, s_y v, 0)

The landmark in the marker frame is ``Q_k = T_MC^-1 T_PC x_p``, so solving
``Q_k ~ T_UM P_k`` gives the image-to-marker transform ``T_UM``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .absolute_orientation import CorrespondenceSet, Mode, solve_horn
from .bscan import BScanGeometry, pixel_to_image_point
from .errors import DegenerateInput, TooFewInliers
from .frames import FrameObservation
from .geom3d import RigidTransform, chain, inverse
from .phantom import PhantomModel, feature_in_marker_frame

AXES = ("x", "y", "z")


@dataclass(frozen=True)
class AxisStats:
    std: float
    mean: float
    min: float
    max: float


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    """Calibrated ``T_UM`` with BRE for every input frame that has a feature.

    ``stats`` summarize the rows of ``per_frame_bre`` whose frame is in
    ``frames_used``.
    """

    T_UM: RigidTransform
    mode: str
    per_frame_bre: list[tuple[int, float, float, float]]
    stats: dict[str, AxisStats]
    frames_used: list[int]
    rms_residual: float = 0.0

    def bre_array(self, used_only: bool = True) -> np.ndarray:
        used = set(self.frames_used)
        rows = [r[1:] for r in self.per_frame_bre if not used_only or r[0] in used]
        return np.array(rows, dtype=float).reshape(-1, 3)

    def mean_bre(self) -> np.ndarray:
        return np.array([self.stats[a].mean for a in AXES])


def bre_stats(bre: np.ndarray) -> dict[str, AxisStats]:
    """Per-axis population std, mean, min and max of an (N, 3) BRE array."""
    bre = np.asarray(bre, dtype=float).reshape(-1, 3)
    if len(bre) == 0:
        nan = float("nan")
        return {a: AxisStats(nan, nan, nan, nan) for a in AXES}
    return {
        a: AxisStats(float(bre[:, i].std()), float(bre[:, i].mean()), float(bre[:, i].min()), float(bre[:, i].max()))
        for i, a in enumerate(AXES)
    }


def _with_feature(frames: Sequence[FrameObservation]) -> list[FrameObservation]:
    return [f for f in frames if f.feature_px is not None]


def build_correspondences(
    frames: Sequence[FrameObservation],
    phantom: PhantomModel,
    geom: BScanGeometry,
    label: str | None = None,
) -> CorrespondenceSet:
    """P_k = metric image point, Q_k = landmark in the marker frame, in frame order."""
    usable = _with_feature(frames)
    if len(usable) < 3:
        raise DegenerateInput(f"need at least 3 frames with a detected feature, got {len(usable)}")
    P = np.array([pixel_to_image_point(*f.feature_px, geom) for f in usable])
    Q = np.array([feature_in_marker_frame(phantom, label, f.T_PC, f.T_MC) for f in usable])
    return CorrespondenceSet(P, Q)


def backprojection_error(
    frame: FrameObservation,
    phantom: PhantomModel,
    geom: BScanGeometry,
    T_UM: RigidTransform,
    label: str | None = None,
) -> tuple[float, float, float]:
    """Componentwise |P_hat - x_p| in the phantom frame (mm)."""
    if frame.feature_px is None:
        raise ValueError(f"frame {frame.frame_id} has no detected feature")
    p_img = pixel_to_image_point(*frame.feature_px, geom)
    p_hat = chain(inverse(frame.T_PC), frame.T_MC, T_UM).apply(p_img)
    d = np.abs(p_hat - phantom.feature(label))
    return float(d[0]), float(d[1]), float(d[2])


def _assemble(T_UM, mode, frames, phantom, geom, used, rms, label) -> CalibrationResult:
    per_frame = [(f.frame_id, *backprojection_error(f, phantom, geom, T_UM, label)) for f in frames]
    used_set = set(used)
    stats = bre_stats([r[1:] for r in per_frame if r[0] in used_set])
    return CalibrationResult(T_UM, mode, per_frame, stats, list(used), rms)


def calibrate(
    frames: Sequence[FrameObservation],
    phantom: PhantomModel,
    geom: BScanGeometry,
    mode: Mode = "rigid",
    label: str | None = None,
) -> CalibrationResult:
    usable = _with_feature(frames)
    sol = solve_horn(build_correspondences(usable, phantom, geom, label), mode)
    return _assemble(sol.transform, mode, usable, phantom, geom, [f.frame_id for f in usable], sol.rms_residual, label)


def filter_and_recalibrate(
    result: CalibrationResult,
    frames: Sequence[FrameObservation],
    phantom: PhantomModel,
    geom: BScanGeometry,
    threshold: float,
    label: str | None = None,
) -> CalibrationResult:
    """Single pass: drop frames whose largest axis BRE exceeds ``threshold`` (mm), re-solve.

    BRE is then re-evaluated on every input frame with the new transform; the
    stats cover the retained frames only.
    """
    used = set(result.frames_used)
    keep = [fid for fid, dx, dy, dz in result.per_frame_bre if fid in used and max(dx, dy, dz) <= threshold]
    if len(keep) < 3:
        raise TooFewInliers(f"only {len(keep)} frames have BRE <= {threshold} mm")
    usable = _with_feature(frames)
    by_id = {f.frame_id: f for f in usable}
    kept = [by_id[fid] for fid in keep]
    sol = solve_horn(build_correspondences(kept, phantom, geom, label), result.mode)
    return _assemble(sol.transform, result.mode, usable, phantom, geom, keep, sol.rms_residual, label)


def rebase(frames: Sequence[FrameObservation], G: RigidTransform) -> list[FrameObservation]:
    """Express all poses in another camera/world frame: T -> G T."""
    return [replace(f, T_MC=G @ f.T_MC, T_PC=G @ f.T_PC) for f in frames]

