import math
from dataclasses import replace

import numpy as np
import pytest

from uscal.bscan import BScanGeometry
from uscal.calibrate import (
    AXES,
    CalibrationResult,
    backprojection_error,
    bre_stats,
    build_correspondences,
    calibrate,
    filter_and_recalibrate,
    rebase,
)
from uscal.errors import DegenerateInput, TooFewInliers
from uscal.frames import FrameObservation
from uscal.geom3d import RigidTransform, random_transform
from uscal.phantom import PhantomModel
from uscal.synthetic import NoiseSpec, SyntheticConfig, generate_poses

from conftest import hom_apply, homogeneous

I = RigidTransform.identity()
UNIT = BScanGeometry(640, 512, 1.0, 1.0)


@pytest.fixture(scope="module")
def clean():
    cfg = SyntheticConfig(n_frames=20, seed=17)
    return cfg, generate_poses(cfg)


def with_outliers(frames, rng, fraction=0.1, size=5.0):
    n_bad = max(1, int(round(fraction * len(frames))))
    bad = set(rng.choice(len(frames), n_bad, replace=False).tolist())
    out = []
    for i, f in enumerate(frames):
        if i in bad:
            d = rng.normal(size=3)
            d *= size / np.linalg.norm(d)
            f = replace(f, T_MC=RigidTransform(f.T_MC.rotation, tuple(f.T_MC.t + d)))
        out.append(f)
    return out, bad


# -- correspondences -------------------------------------------------------------------


def test_minimal_exact_case(clean):
    cfg, frames = clean
    res = calibrate(frames[:3], cfg.phantom, cfg.geometry)
    assert res.rms_residual < 1e-10


def test_degenerate_identity_frames():
    m = PhantomModel("point", (("o", (0.0, 0.0, 0.0)),))
    frames = [FrameObservation(i, I, I, (0.0, 0.0)) for i in range(4)]
    with pytest.raises(DegenerateInput):
        build_correspondences(frames, m, UNIT)


def test_needs_three_detected_features(clean):
    cfg, frames = clean
    partial = [replace(f, feature_px=None) if i > 1 else f for i, f in enumerate(frames)]
    with pytest.raises(DegenerateInput):
        calibrate(partial, cfg.phantom, cfg.geometry)


def test_correspondences_match_chain_oracle(clean):
    cfg, frames = clean
    c = build_correspondences(frames, cfg.phantom, cfg.geometry)
    assert c.N == 20
    for k, f in enumerate(frames):
        Q = hom_apply(np.linalg.inv(homogeneous(f.T_MC)) @ homogeneous(f.T_PC), cfg.phantom.feature())[0]
        assert np.allclose(c.Q[k], Q, atol=1e-10)
        u, v = f.feature_px
        assert np.array_equal(c.P[k], [cfg.geometry.s_x * u, cfg.geometry.s_y * v, 0.0])


def test_frames_without_feature_skipped(clean):
    cfg, frames = clean
    partial = [replace(f, feature_px=None) if i % 4 == 0 else f for i, f in enumerate(frames)]
    res = calibrate(partial, cfg.phantom, cfg.geometry)
    assert res.frames_used == [f.frame_id for f in partial if f.feature_px is not None]
    assert len(res.per_frame_bre) == 15


# -- calibration -------------------------------------------------------------------------


def test_noiseless_recovers_truth(clean):
    cfg, frames = clean
    res = calibrate(frames, cfg.phantom, cfg.geometry)
    assert res.T_UM.rotation.dot(cfg.T_UM_true.rotation) >= 1 - 1e-10
    assert np.linalg.norm(res.T_UM.t - cfg.T_UM_true.t) < 1e-8
    assert res.bre_array().max() < 1e-10
    assert res.mode == "rigid" and res.T_UM.scale == 1.0


def test_similarity_mode_noiseless(clean):
    cfg, frames = clean
    res = calibrate(frames, cfg.phantom, cfg.geometry, mode="similarity")
    assert abs(res.T_UM.scale - 1.0) < 1e-10
    assert res.bre_array().max() < 1e-9


def test_small_noise_is_sub_millimetre():
    for seed in range(5):
        cfg = SyntheticConfig(n_frames=50, seed=seed, noise=NoiseSpec(sigma_t=0.1))
        res = calibrate(generate_poses(cfg), cfg.phantom, cfg.geometry)
        assert np.all(res.mean_bre() < 1.0)


def test_stats_consistent(clean):
    cfg = SyntheticConfig(n_frames=30, seed=3, noise=NoiseSpec(sigma_t=1.0, sigma_px=1.0))
    res = calibrate(generate_poses(cfg), cfg.phantom, cfg.geometry)
    again = bre_stats(res.bre_array())
    for a in AXES:
        assert res.stats[a] == again[a]
        s = res.stats[a]
        assert s.min <= s.mean <= s.max and s.std >= 0
    bre = res.bre_array()
    assert res.stats["y"].std == float(np.std(bre[:, 1]))


def test_bre_stats_empty():
    stats = bre_stats(np.zeros((0, 3)))
    assert all(math.isnan(stats[a].mean) for a in AXES)


# -- backprojection error ------------------------------------------------------------------


def test_bre_exact_chain(clean):
    cfg, frames = clean
    for f in frames:
        assert max(backprojection_error(f, cfg.phantom, cfg.geometry, cfg.T_UM_true)) < 1e-10


def test_bre_unit_translation():
    m = PhantomModel("point", (("o", (10.0, 10.0, 10.0)),))
    f = FrameObservation(0, I, I, (10.0, 10.0))
    T_UM = RigidTransform.translation_only((0.0, 0.0, 10.0))
    assert backprojection_error(f, m, UNIT, T_UM) == (0.0, 0.0, 0.0)
    moved = RigidTransform.translation_only((1.0, 0.0, 10.0))
    assert backprojection_error(f, m, UNIT, moved) == (1.0, 0.0, 0.0)


def test_bre_matches_chain_oracle(rng, clean):
    cfg, _ = clean
    for _ in range(20):
        T_MC, T_PC, T_UM = random_transform(rng, 300.0), random_transform(rng, 300.0), random_transform(rng, 50.0)
        f = FrameObservation(0, T_MC, T_PC, tuple(rng.uniform(0, 400, 2)))
        M = np.linalg.inv(homogeneous(T_PC)) @ homogeneous(T_MC) @ homogeneous(T_UM)
        p = hom_apply(M, [f.feature_px[0] * 0.2, f.feature_px[1] * 0.2, 0.0])[0]
        expect = np.abs(p - cfg.phantom.feature())
        assert np.allclose(backprojection_error(f, cfg.phantom, cfg.geometry, T_UM), expect, atol=1e-10)


def test_bre_needs_feature(clean):
    cfg, frames = clean
    with pytest.raises(ValueError):
        backprojection_error(replace(frames[0], feature_px=None), cfg.phantom, cfg.geometry, cfg.T_UM_true)


# -- filtering -------------------------------------------------------------------------------


def test_filter_all_inliers_identical(clean):
    cfg, frames = clean
    res = calibrate(frames, cfg.phantom, cfg.geometry)
    again = filter_and_recalibrate(res, frames, cfg.phantom, cfg.geometry, 2.0)
    assert again.frames_used == res.frames_used
    assert np.array_equal(again.T_UM.matrix(), res.T_UM.matrix())


def test_infinite_threshold_is_bit_identical():
    cfg = SyntheticConfig(n_frames=25, seed=8, noise=NoiseSpec(sigma_t=1.0))
    frames = generate_poses(cfg)
    res = calibrate(frames, cfg.phantom, cfg.geometry)
    again = filter_and_recalibrate(res, frames, cfg.phantom, cfg.geometry, math.inf)
    assert again.frames_used == res.frames_used
    assert np.array_equal(again.T_UM.matrix(), res.T_UM.matrix())
    assert again.per_frame_bre == res.per_frame_bre
    assert again.stats == res.stats


def test_single_outlier_is_dropped(clean):
    cfg, frames = clean
    res = calibrate(frames, cfg.phantom, cfg.geometry)
    bre = [(fid, 0.3, 0.2, 0.1) for fid, *_ in res.per_frame_bre]
    bre[5] = (bre[5][0], 4.4, 0.5, 0.2)
    staged = CalibrationResult(res.T_UM, res.mode, bre, bre_stats([b[1:] for b in bre]), res.frames_used)
    out = filter_and_recalibrate(staged, frames, cfg.phantom, cfg.geometry, 2.0)
    assert frames[5].frame_id not in out.frames_used
    assert len(out.frames_used) == 19
    assert set(out.frames_used) <= {f.frame_id for f in frames}
    # BRE is still reported for the dropped frame
    assert [r[0] for r in out.per_frame_bre] == [f.frame_id for f in frames]


def test_too_few_inliers():
    cfg = SyntheticConfig(n_frames=10, seed=1, noise=NoiseSpec(sigma_t=3.0))
    frames = generate_poses(cfg)
    res = calibrate(frames, cfg.phantom, cfg.geometry)
    with pytest.raises(TooFewInliers):
        filter_and_recalibrate(res, frames, cfg.phantom, cfg.geometry, 1e-6)


def test_filtering_gross_outliers_helps():
    for seed in range(50):
        rng = np.random.default_rng([seed, 99])
        cfg = SyntheticConfig(n_frames=30, seed=seed, noise=NoiseSpec(sigma_t=0.3))
        frames, _ = with_outliers(generate_poses(cfg), rng)
        res = calibrate(frames, cfg.phantom, cfg.geometry)
        out = filter_and_recalibrate(res, frames, cfg.phantom, cfg.geometry, 2.0)
        assert np.all(out.mean_bre() <= res.mean_bre())


# -- invariance -----------------------------------------------------------------------------


def test_camera_rebase_invariance(rng):
    cfg = SyntheticConfig(n_frames=20, seed=5, noise=NoiseSpec(sigma_t=0.5, sigma_px=0.5))
    frames = generate_poses(cfg)
    a = calibrate(frames, cfg.phantom, cfg.geometry)
    for _ in range(5):
        b = calibrate(rebase(frames, random_transform(rng, 1000.0)), cfg.phantom, cfg.geometry)
        assert np.allclose(a.T_UM.matrix(), b.T_UM.matrix(), atol=1e-9)
        assert np.allclose(a.bre_array(), b.bre_array(), atol=1e-9)
