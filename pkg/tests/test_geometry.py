import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depthsync.errors import BehindCameraError, InvalidInputError
from depthsync.geometry import (CameraIntrinsics, RigidTransform, apply_transform, matrix_to_quat, project,
                                quat_to_matrix, reproject_depth, round_half_away, unproject)
from oracles import splat_loop

K500 = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)

finite = st.floats(-5, 5, allow_nan=False)
unit_quats = st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda q: np.linalg.norm(q) > 0.1)
transforms = st.builds(lambda q, t: RigidTransform(q, t), unit_quats, st.lists(finite, min_size=3, max_size=3))
points = st.lists(finite, min_size=3, max_size=3).map(np.array)


def test_unproject_principal_point():
    np.testing.assert_allclose(unproject((K500.cx, K500.cy), 2.0, K500), [0, 0, 2.0])


def test_unproject_hand_value():
    np.testing.assert_allclose(unproject((820, 240), 1.0, CameraIntrinsics(500, 500, 320, 240, 1000, 480)),
                               [1.0, 0.0, 1.0])


def test_unproject_errors():
    with pytest.raises(InvalidInputError):
        unproject((10, 10), 0.0, K500)
    with pytest.raises(InvalidInputError):
        unproject((640, 10), 1.0, K500)


def test_project_values():
    assert project((0, 0, 1), K500) == ((320.0, 240.0), 1.0)
    (u, v), z = project((1, 0, 1), K500)
    assert (u, v, z) == (820.0, 240.0, 1.0)
    with pytest.raises(BehindCameraError):
        project((0, 0, -1), K500)
    with pytest.raises(InvalidInputError):  # behind-camera is an invalid-input error
        project((0, 0, 0), K500)


def test_round_trip_random():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        p = rng.uniform([-0.5, -0.5], [639.49, 479.49])
        d = rng.uniform(0.1, 9.9)
        (u, v), z = project(unproject(p, d, K500), K500)
        assert abs(u - p[0]) <= 1e-9 * max(1, abs(p[0])) and abs(v - p[1]) <= 1e-9 * max(1, abs(p[1]))
        assert abs(z - d) <= 1e-12 * d


def test_intrinsics_validation():
    with pytest.raises(InvalidInputError):
        CameraIntrinsics(0, 1, 1, 1, 4, 4)
    with pytest.raises(InvalidInputError):
        CameraIntrinsics(1, 1, 5, 1, 4, 4)
    k = CameraIntrinsics.from_dict(K500.to_dict())
    assert k == K500


def test_identity_and_axis_rotation():
    P = np.array([0.3, -1.2, 4.0])
    np.testing.assert_array_equal(apply_transform(RigidTransform.identity(), P), P)
    t = RigidTransform.from_axis_angle((0, 0, 1), 90.0)
    np.testing.assert_allclose(apply_transform(t, [1, 0, 0]), [0, 1, 0], atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(transforms, points, points)
def test_rigidity(t, a, b):
    assert abs(np.linalg.norm(t.apply(a) - t.apply(b)) - np.linalg.norm(a - b)) <= 1e-9


@settings(max_examples=200, deadline=None)
@given(transforms, points)
def test_inverse_round_trip(t, P):
    np.testing.assert_allclose(t.inverse().apply(t.apply(P)), P, atol=1e-9)
    e = t.compose(t.inverse())
    assert e.rotation_angle_deg() < 1e-6 and np.linalg.norm(e.translation) < 1e-9


@settings(max_examples=200, deadline=None)
@given(unit_quats)
def test_quaternion_normalized_and_canonical(q):
    t = RigidTransform(q)
    assert abs(np.linalg.norm(t.rotation) - 1) < 1e-12
    assert t.rotation[0] >= 0
    np.testing.assert_allclose(quat_to_matrix(matrix_to_quat(t.matrix3)), t.matrix3, atol=1e-9)


def test_compose_matches_matrix_product():
    rng = np.random.default_rng(1)
    a = RigidTransform(rng.normal(size=4), rng.normal(size=3))
    b = RigidTransform(rng.normal(size=4), rng.normal(size=3))
    np.testing.assert_allclose(a.compose(b).matrix, a.matrix @ b.matrix, atol=1e-12)


def test_transform_dict_round_trip():
    t = RigidTransform.from_axis_angle((0, 1, 0), 5.0, (0.08, 0, 0))
    u = RigidTransform.from_dict(t.to_dict())
    np.testing.assert_array_equal(u.rotation, t.rotation)
    np.testing.assert_array_equal(u.translation, t.translation)


def test_round_half_away():
    np.testing.assert_array_equal(round_half_away(np.array([0.5, 1.5, -0.5, -1.5, 2.49, -2.51])),
                                  [1, 2, -1, -2, 2, -3])


def _random_depth(rng, k, holes=0.2):
    d = rng.uniform(0.5, 5.0, k.shape)
    d[rng.random(k.shape) < holes] = 0
    return np.rint(d * 1000) / 1000


def test_reproject_identity_is_identity(backend):
    k = CameraIntrinsics(50, 50, 15.5, 11.5, 32, 24)
    rng = np.random.default_rng(2)
    d = _random_depth(rng, k)
    c = rng.integers(0, 255, k.shape + (3,), dtype=np.uint8)
    out, col, idx = reproject_depth(d, c, k, k, RigidTransform.identity(), return_index=True)
    np.testing.assert_allclose(out, d, rtol=1e-12)
    np.testing.assert_array_equal(col[d > 0], c[d > 0])
    np.testing.assert_array_equal(idx[d > 0], np.flatnonzero(d.ravel() > 0))
    again, _ = reproject_depth(out, col, k, k, RigidTransform.identity())
    np.testing.assert_array_equal(again, out)


def test_reproject_zbuffer_nearest_wins(backend):
    # a wide-angle destination camera maps both source pixels onto pixel (0, 0)
    k_src = CameraIntrinsics(10, 10, 1.5, 0.5, 4, 2)
    k_dst = CameraIntrinsics(1, 1, 0.5, 0.5, 2, 2)
    d = np.zeros(k_src.shape)
    d[0, 0] = 2.0
    d[0, 1] = 1.0
    out, _, idx = reproject_depth(d, None, k_src, k_dst, RigidTransform.identity(), return_index=True)
    assert out[0, 0] == 1.0 and idx[0, 0] == 1
    assert np.count_nonzero(out) == 1


def test_reproject_dimension_errors():
    k = CameraIntrinsics(50, 50, 15.5, 11.5, 32, 24)
    with pytest.raises(InvalidInputError):
        reproject_depth(np.ones((24, 31)), None, k, k, RigidTransform.identity())
    with pytest.raises(InvalidInputError):
        reproject_depth(np.ones((24, 32)), np.zeros((24, 31, 3)), k, k, RigidTransform.identity())


def test_reproject_matches_per_pixel_loop(backend):
    rng = np.random.default_rng(3)
    k_src = CameraIntrinsics(40, 40, 19.5, 14.5, 40, 30)
    k_dst = CameraIntrinsics(30, 30, 12.5, 17.5, 25, 35)
    d = _random_depth(rng, k_src)
    t = RigidTransform.from_axis_angle((0.2, 1, 0.1), 7.0, (0.05, -0.02, 0.1))
    out, _, idx = reproject_depth(d, None, k_src, k_dst, t, return_index=True)
    # independent per-pixel computation with scalar geometry functions
    u, v, z, src = [], [], [], []
    for y in range(k_src.height):
        for x in range(k_src.width):
            if d[y, x] > 0:
                (pu, pv), pz = project(t.apply(unproject((x, y), d[y, x], k_src)), k_dst)
                u.append(int(round_half_away(pu))); v.append(int(round_half_away(pv))); z.append(pz)
                src.append(y * k_src.width + x)
    zb, win = splat_loop(np.array(u), np.array(v), np.array(z), k_dst.height, k_dst.width)
    np.testing.assert_allclose(out, zb, rtol=1e-12)
    expect = np.where(win >= 0, np.array(src + [-1])[win], -1)
    np.testing.assert_array_equal(idx, expect)


def test_reproject_zbuffer_dominance(backend):
    rng = np.random.default_rng(4)
    k = CameraIntrinsics(30, 30, 15.5, 15.5, 32, 32)
    d = _random_depth(rng, k, 0.0)
    t = RigidTransform.from_axis_angle((0, 1, 0), 20.0, (0.3, 0, 0))
    out, _, idx = reproject_depth(d, None, k, k, t, return_index=True)
    from depthsync.geometry import unproject_points, project_points
    v, u = np.divmod(np.arange(d.size), k.width)
    X = t.apply(unproject_points(u, v, d.ravel(), k))
    px, z = project_points(X, k)
    du = round_half_away(px[:, 0]).astype(int); dv = round_half_away(px[:, 1]).astype(int)
    inside = (du >= 0) & (dv >= 0) & (du < k.width) & (dv < k.height) & (z > 0)
    for n in np.flatnonzero(inside):
        assert out[dv[n], du[n]] <= z[n]
