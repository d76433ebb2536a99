"""Acceptance criteria, each runnable on its own.

A summary line per criterion is printed at the end of the pytest run.
"""

import io
import math
import time

import numpy as np
import pytest

from uscal.absolute_orientation import CorrespondenceSet, solve_horn, solve_svd_oracle
from uscal.bscan import BScanImage, detect_circle
from uscal.calibrate import calibrate, filter_and_recalibrate, rebase
from uscal.cli import run_cli
from uscal.dataset_io import Dataset, load_dataset, save_dataset
from uscal.errors import NoCircleFound
from uscal.geom3d import RigidTransform, UnitQuaternion, random_transform
from uscal.planar_pose import (
    CameraIntrinsics,
    PlanarTarget,
    estimate_pose,
    pose_error,
    project_points,
)
from uscal.synthetic import (
    NoiseSpec,
    SyntheticConfig,
    generate_dataset,
    generate_poses,
    intersection_circle,
    noise_study,
    render_bscan,
)


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


@pytest.mark.acceptance(1, "exact recovery")
def test_exact_recovery():
    with Timer() as t:
        cfg = SyntheticConfig(n_frames=20, seed=2024)
        frames = generate_poses(cfg)
        res = calibrate(frames, cfg.phantom, cfg.geometry)
    assert res.T_UM.rotation.dot(cfg.T_UM_true.rotation) >= 1 - 1e-10
    assert np.linalg.norm(res.T_UM.t - cfg.T_UM_true.t) < 1e-8
    assert res.bre_array().max() < 1e-10
    assert t.elapsed < 1.0


@pytest.mark.acceptance(2, "quaternion vs SVD oracle")
def test_oracle_equivalence():
    rng = np.random.default_rng(7)
    worst_rms, worst_dot = 0.0, 1.0
    with Timer() as t:
        for i in range(1000):
            n = int(rng.integers(3, 51))
            sigma = (0.0, 0.5, 1.0)[i % 3]
            P = rng.uniform(-100, 100, (n, 3))
            T = random_transform(rng, 200.0)
            Q = T.apply(P) + rng.normal(scale=sigma, size=(n, 3))
            c = CorrespondenceSet(P, Q)
            h, s = solve_horn(c), solve_svd_oracle(c)
            worst_rms = max(worst_rms, abs(h.rms_residual - s.rms_residual))
            worst_dot = min(worst_dot, abs(h.transform.rotation.dot(s.transform.rotation)))
    print(f"max |drms| {worst_rms:.2e} mm, min dot {worst_dot:.15f}")
    assert worst_rms < 1e-9
    assert worst_dot >= 1 - 1e-9
    assert t.elapsed < 10.0


@pytest.mark.acceptance(3, "noise study trend")
def test_noise_study_trend():
    with Timer() as t:
        rows = noise_study(SyntheticConfig(n_frames=20, seed=3), [0.0, 0.5, 1.0, 2.0], trials=100)
    std = [r.residual_std for r in rows]
    print("residual std:", " ".join(f"{s:.3f}" for s in std))
    assert std[0] == 0.0
    assert std[0] < std[1] < std[2] < std[3]
    assert 1.6 <= std[2] / std[1] <= 2.4
    assert 1.6 <= std[3] / std[2] <= 2.4
    for got, ref in zip(std[1:], (0.272, 0.504, 1.127)):
        assert 0.5 * ref <= got <= 1.5 * ref
    assert t.elapsed < 30.0


@pytest.mark.acceptance(4, "detector accuracy")
def test_detector_accuracy():
    spans = (None, 180.0, 270.0, 360.0)  # None draws the dome half, itself 180 degrees
    worst_c, worst_r = 0.0, 0.0
    with Timer() as t:
        for seed in range(50):
            cfg = SyntheticConfig(n_frames=3, seed=seed)
            f = generate_poses(cfg)[0]
            truth = intersection_circle(cfg.phantom, f, cfg.geometry, cfg.T_UM_true)
            img = render_bscan(
                cfg.phantom, f, cfg.geometry, cfg.T_UM_true, "speckle", seed=seed, arc_span_deg=spans[seed % 4]
            )
            r_full = cfg.phantom.hemisphere_radius / cfg.geometry.s_x
            det = detect_circle(img, 0.3 * r_full, 1.1 * r_full)
            worst_c = max(worst_c, math.dist(det.center_px, truth.center_px))
            worst_r = max(worst_r, abs(det.radius_px - truth.radius_px))
        blank = BScanImage(cfg.geometry, np.zeros((cfg.geometry.height, cfg.geometry.width), dtype=np.uint8))
        with pytest.raises(NoCircleFound):
            detect_circle(blank, 0.3 * r_full, 1.1 * r_full)
    print(f"worst center error {worst_c:.3f} px, worst radius error {worst_r:.3f} px")
    assert worst_c <= 2.0
    assert worst_r <= 2.0
    assert t.elapsed < 30.0


@pytest.mark.acceptance(5, "near-millimetre end to end")
def test_near_millimetre():
    with Timer() as t:
        cfg = SyntheticConfig(n_frames=50, seed=5, noise=NoiseSpec(sigma_t=0.1, sigma_px=1.0))
        frames = generate_poses(cfg)
        res = calibrate(frames, cfg.phantom, cfg.geometry)
        filtered = filter_and_recalibrate(res, frames, cfg.phantom, cfg.geometry, 1.0)
    print("mean BRE", res.mean_bre().round(3), "filtered", filtered.mean_bre().round(3))
    assert np.all(res.mean_bre() < 1.0)
    assert np.all(filtered.mean_bre() <= res.mean_bre())
    assert t.elapsed < 10.0


def random_board_pose(rng):
    axis = rng.normal(size=3)
    R = UnitQuaternion.from_rotvec(axis / np.linalg.norm(axis) * rng.uniform(0, math.radians(45)))
    # board centre roughly on the optical axis, 400 to 900 mm away
    centre = np.array([87.5, 87.5, 0.0])
    t = np.array([rng.uniform(-60, 60), rng.uniform(-60, 60), rng.uniform(400, 900)]) - R.to_matrix() @ centre
    return RigidTransform(R, tuple(t))


@pytest.mark.acceptance(6, "planar pose round trip")
def test_planar_pose():
    rng = np.random.default_rng(11)
    intr = CameraIntrinsics(800.0, 800.0, 320.0, 240.0, 640, 480)
    board = PlanarTarget.checkerboard(8, 8, 25.0)
    quad = PlanarTarget.quad(175.0)
    worst = 0.0
    with Timer() as t:
        for _ in range(100):
            pose = random_board_pose(rng)
            est = estimate_pose(intr, board, project_points(intr, pose, board.points))
            worst = max(worst, sum(pose_error(est.pose, pose)))
            assert all(b <= a for a, b in zip(est.cost_history, est.cost_history[1:]))
        err_board, err_quad = [], []
        for _ in range(200):
            pose = random_board_pose(rng)
            for target, errs in ((board, err_board), (quad, err_quad)):
                obs = project_points(intr, pose, target.points) + rng.normal(scale=0.5, size=(len(target), 2))
                est = estimate_pose(intr, target, obs)
                errs.append(pose_error(est.pose, pose))
    board_mean, quad_mean = np.mean(err_board, axis=0), np.mean(err_quad, axis=0)
    print(f"noiseless worst {worst:.1e}; board {board_mean.round(4)} vs quad {quad_mean.round(4)} (rad, mm)")
    assert worst <= 1e-6
    assert np.all(board_mean < quad_mean)
    assert t.elapsed < 30.0


@pytest.mark.acceptance(7, "camera rebase invariance")
def test_rebase_invariance():
    rng = np.random.default_rng(77)
    with Timer() as t:
        cfg = SyntheticConfig(n_frames=20, seed=8, noise=NoiseSpec(sigma_t=0.5, sigma_px=0.5))
        frames = generate_poses(cfg)
        a = calibrate(frames, cfg.phantom, cfg.geometry)
        b = calibrate(rebase(frames, random_transform(rng, 2000.0)), cfg.phantom, cfg.geometry)
    assert np.abs(a.T_UM.matrix() - b.T_UM.matrix()).max() < 1e-9
    assert np.abs(a.bre_array() - b.bre_array()).max() < 1e-9
    assert t.elapsed < 1.0


def cli_output(*argv):
    out, err = io.StringIO(), io.StringIO()
    assert run_cli([str(a) for a in argv], out, err) == 0, err.getvalue()
    return out.getvalue()


@pytest.mark.acceptance(8, "determinism and round trip")
def test_determinism_round_trip(tmp_path):
    cfg = SyntheticConfig(n_frames=10, seed=21, noise=NoiseSpec(sigma_t=0.5, sigma_px=0.5))
    ds = Dataset(None, cfg.phantom, cfg.geometry, generate_dataset(cfg), "synthetic", {"seed": 21}, cfg.T_UM_true)
    back = load_dataset(save_dataset(ds, tmp_path / "ds"))
    for a, b in zip(ds.frames, back.frames, strict=True):
        assert a.T_MC.matrix().tolist() == b.T_MC.matrix().tolist()
        assert a.T_PC.matrix().tolist() == b.T_PC.matrix().tolist()
        assert a.feature_px == b.feature_px
        assert np.array_equal(a.bscan.pixels, b.bscan.pixels)
    assert back.T_UM_true.matrix().tolist() == ds.T_UM_true.matrix().tolist()

    runs = []
    for name in ("a", "b"):
        root = tmp_path / name
        cli_output("generate", "--out", root, "--seed", 13, "--frames", 6, "--sigma-t", 0.5, "--sigma-px", 0.5)
        files = {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
        outputs = (
            cli_output("calibrate", "--dataset", root),
            cli_output("evaluate", "--dataset", root, "--threshold", 1.0),
            cli_output("noise-study", "--sigmas", "0,1", "--trials", 5, "--seed", 13),
        )
        runs.append((files, outputs))
    assert runs[0][0] == runs[1][0]
    assert runs[0][1] == runs[1][1]
