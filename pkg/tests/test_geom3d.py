import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from uscal.geom3d import (
    RigidTransform,
    UnitQuaternion,
    apply,
    chain,
    compose,
    inverse,
    random_rotation,
    random_transform,
    rotation_about,
    rotation_angle_between,
)

from conftest import hom_apply, homogeneous

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def assert_same(a: RigidTransform, b: RigidTransform, tol=1e-10):
    assert np.allclose(a.matrix(), b.matrix(), atol=tol, rtol=0)


# -- quaternion ---------------------------------------------------------------


def test_quaternion_normalized_and_canonical():
    q = UnitQuaternion(-2.0, 0.0, 0.0, 0.0)
    assert (q.w, q.x, q.y, q.z) == (1.0, 0.0, 0.0, 0.0)
    q = UnitQuaternion(0.0, -3.0, 4.0, 0.0)
    assert q.x > 0 and math.isclose(q.x, 0.6) and math.isclose(q.y, -0.8)


def test_zero_quaternion_rejected():
    with pytest.raises(ValueError):
        UnitQuaternion(0.0, 0.0, 0.0, 0.0)


@given(seeds)
def test_q_and_minus_q_are_equal(seed):
    q = random_rotation(np.random.default_rng(seed))
    assert UnitQuaternion(*(-q.as_array())) == q
    n = q.as_array() @ q.as_array()
    assert abs(n - 1.0) < 1e-12


@given(seeds)
def test_matrix_round_trip(seed):
    M = Rotation.random(random_state=seed).as_matrix()
    assert np.allclose(UnitQuaternion.from_matrix(M).to_matrix(), M, atol=1e-10)


def test_from_matrix_near_180_degrees():
    for axis in np.eye(3):
        M = Rotation.from_rotvec(math.pi * axis).as_matrix()
        assert np.allclose(UnitQuaternion.from_matrix(M).to_matrix(), M, atol=1e-12)


@given(seeds)
def test_to_matrix_matches_scipy(seed):
    q = random_rotation(np.random.default_rng(seed))
    ref = Rotation.from_quat([q.x, q.y, q.z, q.w]).as_matrix()
    assert np.allclose(q.to_matrix(), ref, atol=1e-12)


def test_rotation_angle_between():
    a = rotation_about("z", 0.3)
    b = rotation_about("z", -0.2)
    assert math.isclose(rotation_angle_between(a, b), 0.5, abs_tol=1e-12)
    assert rotation_angle_between(a, a) == 0.0
    # precision survives for nearly identical rotations
    c = UnitQuaternion.from_rotvec([1e-12, 0.0, 0.0]) * a
    assert math.isclose(rotation_angle_between(a, c), 1e-12, rel_tol=1e-3)


# -- transform invariants -------------------------------------------------------------


@given(seeds)
def test_rotation_matrix_is_orthonormal(seed):
    T = random_transform(np.random.default_rng(seed), scale=(0.2, 5.0))
    R = T.R
    assert np.abs(R.T @ R - np.eye(3)).max() < 1e-10
    assert abs(np.linalg.det(R) - 1.0) < 1e-10


def test_scale_must_be_positive():
    with pytest.raises(ValueError):
        RigidTransform(UnitQuaternion.identity(), (0.0, 0.0, 0.0), 0.0)


def test_frozen():
    T = RigidTransform.identity()
    with pytest.raises(AttributeError):
        T.scale = 2.0


# -- compose ---------------------------------------------------------------------


def test_compose_identity(rng):
    T = random_transform(rng)
    assert_same(compose(RigidTransform.identity(), T), T)
    assert_same(compose(T, RigidTransform.identity()), T)


def test_compose_with_inverse_is_identity(rng):
    T = random_transform(rng, scale=(0.5, 3.0))
    assert_same(compose(T, inverse(T)), RigidTransform.identity())
    assert_same(compose(inverse(T), T), RigidTransform.identity())


@given(seeds)
def test_compose_matches_matrix_product(seed):
    rng = np.random.default_rng(seed)
    a = random_transform(rng, scale=(0.5, 2.0))
    b = random_transform(rng, scale=(0.5, 2.0))
    ab = compose(a, b)
    assert np.allclose(homogeneous(ab), homogeneous(a) @ homogeneous(b), atol=1e-10)
    assert math.isclose(ab.scale, a.scale * b.scale, rel_tol=1e-15)
    p = rng.uniform(-100, 100, size=(5, 3))
    assert np.allclose(apply(ab, p), apply(a, apply(b, p)), atol=1e-10)


@settings(max_examples=50)
@given(seeds)
def test_compose_associative(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_transform(rng, scale=(0.5, 2.0)) for _ in range(3))
    p = rng.uniform(-100, 100, size=(10, 3))
    lhs = apply(compose(compose(a, b), c), p)
    rhs = apply(compose(a, compose(b, c)), p)
    assert np.abs(lhs - rhs).max() < 1e-9


def test_matmul_and_chain(rng):
    a, b, c = (random_transform(rng) for _ in range(3))
    assert_same(a @ b, compose(a, b))
    assert_same(chain(a, b, c), compose(a, compose(b, c)))
    assert_same(chain(), RigidTransform.identity())


# -- inverse ---------------------------------------------------------------------------


def test_inverse_identity():
    assert_same(inverse(RigidTransform.identity()), RigidTransform.identity())


def test_inverse_translation():
    inv = inverse(RigidTransform.translation_only((1.0, 2.0, 3.0)))
    assert np.array_equal(inv.t, [-1.0, -2.0, -3.0])
    assert inv.rotation == UnitQuaternion.identity()


@given(seeds)
def test_inverse_matches_matrix_inverse(seed):
    T = random_transform(np.random.default_rng(seed), scale=(0.1, 10.0))
    inv = inverse(T)
    assert np.allclose(homogeneous(inv), np.linalg.inv(homogeneous(T)), atol=1e-10)
    assert math.isclose(inv.scale, 1.0 / T.scale, rel_tol=1e-15)


# -- apply -------------------------------------------------------------------------


def test_apply_identity():
    assert np.array_equal(apply(RigidTransform.identity(), (1.0, 2.0, 3.0)), [1.0, 2.0, 3.0])


def test_apply_quarter_turn_about_z():
    T = RigidTransform(rotation_about("z", math.pi / 2), (0.0, 0.0, 0.0))
    assert np.allclose(apply(T, (1.0, 0.0, 0.0)), [0.0, 1.0, 0.0], atol=1e-12)


def test_apply_scale_then_translate():
    T = RigidTransform(UnitQuaternion.identity(), (1.0, 0.0, 0.0), 2.0)
    assert np.array_equal(apply(T, (3.0, 0.0, 0.0)), [7.0, 0.0, 0.0])


def test_apply_vectorized_matches_oracle(rng):
    T = random_transform(rng, scale=(0.5, 2.0))
    p = rng.uniform(-50, 50, size=(20, 3))
    assert apply(T, p).shape == (20, 3)
    assert np.allclose(apply(T, p), hom_apply(homogeneous(T), p), atol=1e-10)
    assert apply(T, p[0]).shape == (3,)


@given(seeds)
def test_rigid_apply_preserves_distances(seed):
    rng = np.random.default_rng(seed)
    T = random_transform(rng, max_translation=1000.0)
    p, q = rng.uniform(-500, 500, size=(2, 3))
    d0 = np.linalg.norm(p - q)
    d1 = np.linalg.norm(apply(T, p) - apply(T, q))
    assert abs(d1 - d0) < 1e-9


def test_apply_rejects_nonfinite():
    with pytest.raises(ValueError):
        apply(RigidTransform.identity(), (np.nan, 0.0, 0.0))


def test_from_matrix4_round_trip(rng):
    T = random_transform(rng, scale=(0.5, 2.0))
    assert_same(RigidTransform.from_matrix4(T.matrix()), T, tol=1e-12)
