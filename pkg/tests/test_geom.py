import math

import numpy as np
import pytest

from legpress.geom import (
    GimbalLockError,
    PointCloud,
    RigidTransform,
    apply_transform,
    compose,
    euler_zyx_to_matrix,
    is_rotation,
    matrix_to_euler_zyx,
    rotation_exp,
)


def random_transform(rng):
    w = rng.normal(size=3)
    return RigidTransform(rotation_exp(w), rng.normal(size=3))


def test_compose_identity():
    rng = np.random.default_rng(0)
    t = random_transform(rng)
    out = compose(RigidTransform.identity(), t)
    assert np.allclose(out.rotation, t.rotation)
    assert np.allclose(out.translation, t.translation)


def test_compose_inverse_is_identity():
    rng = np.random.default_rng(1)
    t = random_transform(rng)
    out = compose(t, t.inverse())
    assert np.max(np.abs(out.rotation - np.eye(3))) < 1e-9
    assert np.max(np.abs(out.translation)) < 1e-9


def test_compose_matches_pointwise_sequential_application():
    # brute-force oracle: (a o b)(x) computed point by point
    rng = np.random.default_rng(2)
    a = random_transform(rng)
    b = random_transform(rng)
    pts = rng.normal(size=(100, 3))
    ab = compose(a, b)
    expected = np.array([a.apply(b.apply(x)) for x in pts])
    assert np.max(np.abs(ab.apply(pts) - expected)) < 1e-9


def test_transform_group_laws():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a, b, c = (random_transform(rng) for _ in range(3))
        left = compose(compose(a, b), c)
        right = compose(a, compose(b, c))
        assert np.max(np.abs(left.rotation - right.rotation)) < 1e-9
        assert np.max(np.abs(left.translation - right.translation)) < 1e-9


def test_rotation_closure():
    rng = np.random.default_rng(4)
    for _ in range(50):
        r1 = rotation_exp(rng.normal(size=3))
        r2 = rotation_exp(rng.normal(size=3))
        assert is_rotation(r1 @ r2)


def test_apply_transform_identity_and_translation():
    cloud = PointCloud(np.array([[0.0, 0, 0], [1, 2, 3], [-1, 0, 0.5]]))
    same = apply_transform(RigidTransform.identity(), cloud)
    assert np.allclose(same.points, cloud.points)

    t = RigidTransform(np.eye(3), [0.1, 0.0, 0.0])
    shifted = apply_transform(t, cloud)
    assert np.allclose(shifted.points - cloud.points, [[0.1, 0, 0]] * 3)


def test_apply_transform_yaw_90():
    t = RigidTransform.from_euler(0.0, 0.0, math.pi / 2)
    cloud = PointCloud([[1.0, 0.0, 0.0]])
    out = apply_transform(t, cloud)
    assert np.max(np.abs(out.points[0] - np.array([0.0, 1.0, 0.0]))) < 1e-9


def test_apply_transform_rotates_normals_and_preserves_order():
    rng = np.random.default_rng(5)
    n = rng.normal(size=(10, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    cloud = PointCloud(rng.normal(size=(10, 3)), n)
    t = random_transform(rng)
    out = apply_transform(t, cloud)
    assert np.allclose(out.normals, n @ t.rotation.T)
    assert np.allclose(np.linalg.norm(out.normals, axis=1), 1.0)


def test_apply_transform_empty_cloud_rejected():
    with pytest.raises(ValueError):
        apply_transform(RigidTransform.identity(), PointCloud(np.zeros((0, 3))))


def test_apply_transform_is_isometry():
    rng = np.random.default_rng(6)
    pts = rng.normal(size=(30, 3))
    cloud = PointCloud(pts)
    out = apply_transform(random_transform(rng), cloud)
    d0 = np.linalg.norm(pts[:, None] - pts[None, :], axis=2)
    d1 = np.linalg.norm(out.points[:, None] - out.points[None, :], axis=2)
    assert np.max(np.abs(d0 - d1)) < 1e-9


def test_euler_zero_is_identity():
    assert np.allclose(euler_zyx_to_matrix(0, 0, 0), np.eye(3))


def test_euler_yaw_quarter_turn():
    R = euler_zyx_to_matrix(0.0, 0.0, math.pi / 2)
    assert np.max(np.abs(R @ np.array([1.0, 0, 0]) - np.array([0.0, 1, 0]))) < 1e-12


def test_euler_round_trip_away_from_gimbal():
    rng = np.random.default_rng(7)
    for _ in range(200):
        roll = rng.uniform(-math.pi, math.pi)
        pitch = rng.uniform(-1.4, 1.4)
        yaw = rng.uniform(-math.pi, math.pi)
        R = euler_zyx_to_matrix(roll, pitch, yaw)
        r2, p2, y2 = matrix_to_euler_zyx(R)
        R2 = euler_zyx_to_matrix(r2, p2, y2)
        assert np.max(np.abs(R - R2)) < 1e-9


def test_euler_extraction_rejects_gimbal_region():
    R = euler_zyx_to_matrix(0.3, math.pi / 2 - 0.01, 0.2)
    with pytest.raises(GimbalLockError):
        matrix_to_euler_zyx(R)


def test_rotation_about_center_keeps_center_fixed():
    rng = np.random.default_rng(8)
    c = rng.normal(size=3)
    t = RigidTransform.rotation_about(rotation_exp(rng.normal(size=3)), c)
    assert np.max(np.abs(t.apply(c) - c)) < 1e-12
