"""Freehand ultrasound probe calibration with a hemisphere phantom."""

from .absolute_orientation import AbsOrientSolution, CorrespondenceSet, solve_horn, solve_svd_oracle
from .bscan import BScanGeometry, BScanImage, CircleDetection, detect_circle, read_pgm, write_pgm
from .calibrate import CalibrationResult, backprojection_error, build_correspondences, calibrate, filter_and_recalibrate
from .dataset_io import Dataset, load_dataset, save_dataset
from .errors import NumericalError, UscalError
from .frames import FrameObservation
from .geom3d import RigidTransform, UnitQuaternion
from .phantom import PRESETS, PhantomModel
from .planar_pose import CameraIntrinsics, PlanarTarget, PoseEstimate, estimate_pose
from .synthetic import NoiseSpec, SyntheticConfig, generate_dataset, generate_poses, noise_study

__all__ = [
    "AbsOrientSolution",
    "BScanGeometry",
    "BScanImage",
    "CalibrationResult",
    "CameraIntrinsics",
    "CircleDetection",
    "CorrespondenceSet",
    "Dataset",
    "FrameObservation",
    "NoiseSpec",
    "NumericalError",
    "PRESETS",
    "PhantomModel",
    "PlanarTarget",
    "PoseEstimate",
    "RigidTransform",
    "SyntheticConfig",
    "UnitQuaternion",
    "UscalError",
    "backprojection_error",
    "build_correspondences",
    "calibrate",
    "detect_circle",
    "estimate_pose",
    "filter_and_recalibrate",
    "generate_dataset",
    "generate_poses",
    "load_dataset",
    "noise_study",
    "read_pgm",
    "save_dataset",
    "solve_horn",
    "solve_svd_oracle",
    "write_pgm",
]
