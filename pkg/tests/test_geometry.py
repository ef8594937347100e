import math
import time

import numpy as np
import pytest

from stereogaze import geometry as g
from stereogaze.errors import NonPositiveDepth, RaysParallel, RayParallelToPlane


def test_axis_aligned_ray_hits_plane_center():
    p = g.ray_plane_intersect(g.GazeRay([0, 0, 0], [0, 0, 1]), g.GazePlane(distance=35))
    assert (p.x, p.y) == (0.0, 0.0)


def test_oblique_ray_matches_parametric_line():
    ray = g.GazeRay.through(np.array([-3.0, 0, 0]), np.array([0.0, 0, 75]))
    p = g.ray_plane_intersect(ray, g.GazePlane(distance=35))
    # parametric oracle: x(t) = -3 + 3 t with z(t) = 75 t, so t = 35/75
    t = 35.0 / 75.0
    assert p.x == pytest.approx(-3.0 + 3.0 * t, abs=1e-12)
    assert p.x == pytest.approx(-1.6, abs=1e-12)
    assert p.y == pytest.approx(0.0, abs=1e-12)


def test_ray_parallel_to_plane_raises():
    with pytest.raises(RayParallelToPlane):
        g.ray_plane_intersect(g.GazeRay([0, 0, 0], [0, 1, 0]), g.GazePlane())


def test_plane_pixel_roundtrip():
    plane = g.GazePlane()
    u, v = plane.to_pixels(3.2, -1.1)
    x, y = plane.to_cm(u, v)
    assert (x, y) == pytest.approx((3.2, -1.1), abs=1e-12)
    assert plane.to_pixels(0, 0) == pytest.approx((960.0, 540.0))


def test_vergence_closed_form():
    cfg = g.BinocularConfig()
    t = np.array([0.0, 0, 75])
    left = g.GazeRay.through(cfg.eye_left, t)
    right = g.GazeRay.through(cfg.eye_right, t)
    assert g.vergence_angle(left, right) == pytest.approx(math.degrees(2 * math.atan(3 / 75)), abs=1e-12)
    assert g.vergence_angle(left, right) == pytest.approx(4.581, abs=5e-4)


def test_vergence_parallel_and_far_limit():
    r = g.GazeRay([0, 0, 0], [0, 0, 1])
    assert g.vergence_angle(r, r) == 0.0
    cfg = g.BinocularConfig()
    t = np.array([0.0, 0, 1e9])
    a = g.vergence_angle(g.GazeRay.through(cfg.eye_left, t), g.GazeRay.through(cfg.eye_right, t))
    assert a < 1e-5


def test_vergence_symmetric_and_rotation_invariant(rng):
    for _ in range(20):
        d1, d2 = rng.normal(size=3), rng.normal(size=3)
        a = g.vergence_angle(g.GazeRay([0, 0, 0], d1), g.GazeRay([1, 0, 0], d2))
        b = g.vergence_angle(g.GazeRay([1, 0, 0], d2), g.GazeRay([0, 0, 0], d1))
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        c = g.vergence_angle(g.GazeRay([0, 0, 0], q @ d1), g.GazeRay([0, 0, 0], q @ d2))
        assert a == pytest.approx(b, abs=1e-12)
        assert a == pytest.approx(c, abs=1e-9)


def test_batch_vergence_matches_scalar(rng):
    dl, dr = rng.normal(size=(10, 3)), rng.normal(size=(10, 3))
    batch = g.vergence_angle_batch(dl, dr)
    for i in range(10):
        assert batch[i] == pytest.approx(g.vergence_angle(g.GazeRay([0, 0, 0], dl[i]), g.GazeRay([0, 0, 0], dr[i])))


def test_intersection_exact_for_crossing_rays():
    cfg = g.BinocularConfig()
    t = np.array([0.0, 0, 55])
    p = g.ray_intersection_depth(g.GazeRay.through(cfg.eye_left, t), g.GazeRay.through(cfg.eye_right, t))
    np.testing.assert_allclose(p, t, atol=1e-9)


def _brute_midpoint(left: g.GazeRay, right: g.GazeRay):
    # independent oracle: coarse-to-fine grid minimization of line distance over (t1, t2)
    lo1, hi1, lo2, hi2 = 0.0, 200.0, 0.0, 200.0
    for _ in range(25):
        t1 = np.linspace(lo1, hi1, 41)
        t2 = np.linspace(lo2, hi2, 41)
        P = left.origin + t1[:, None] * left.direction
        Q = right.origin + t2[:, None] * right.direction
        d = np.linalg.norm(P[:, None, :] - Q[None, :, :], axis=2)
        i, j = np.unravel_index(np.argmin(d), d.shape)
        s1, s2 = (hi1 - lo1) / 40, (hi2 - lo2) / 40
        lo1, hi1 = t1[i] - 2 * s1, t1[i] + 2 * s1
        lo2, hi2 = t2[j] - 2 * s2, t2[j] + 2 * s2
    return 0.5 * (left.point_at(t1[i]) + right.point_at(t2[j])), d[i, j]


def test_intersection_perturbed_matches_brute_force():
    cfg = g.BinocularConfig()
    t = np.array([0.0, 0, 55])
    dl = g.normalize(t - cfg.eye_left)
    yaw, pitch = g.gaze_angles(dl)
    left = g.GazeRay(cfg.eye_left, g.direction_from_angles(yaw, pitch + 0.5))
    right = g.GazeRay.through(cfg.eye_right, t)
    closed = g.ray_intersection_depth(left, right)
    brute, gap = _brute_midpoint(left, right)
    assert gap > 0.1  # the rays really are skew
    np.testing.assert_allclose(closed, brute, atol=1e-6)
    assert 50 < closed[2] < 60


def test_parallel_rays_raise():
    with pytest.raises(RaysParallel):
        g.ray_intersection_depth(g.GazeRay([-3, 0, 0], [0, 0, 1]), g.GazeRay([3, 0, 0], [0, 0, 1]))


def test_disparity_examples():
    cfg = g.BinocularConfig(6.0, 35.0)
    assert g.disparity_from_depth([0, 0, 35], cfg) == 0.0
    assert g.disparity_from_depth([0, 0, 75], cfg) == pytest.approx(6 * 40 / 75, abs=1e-12)
    assert g.disparity_from_depth([0, 0, 1e12], cfg) == pytest.approx(6.0, abs=1e-9)
    with pytest.raises(NonPositiveDepth):
        g.disparity_from_depth([0, 0, 0], cfg)
    assert g.disparity_pixels([0, 0, 75], cfg, g.GazePlane()) == pytest.approx(3.2 * 40)


def test_disparity_strictly_monotone():
    cfg = g.BinocularConfig()
    zs = np.linspace(1, 1000, 500)
    p = [g.disparity_from_depth([0, 0, z], cfg) for z in zs]
    assert np.all(np.diff(p) > 0)


def test_disparity_matches_screen_parallax_triangles():
    # parallax of a point straight ahead equals the separation of its two eye projections on the plane
    cfg = g.BinocularConfig()
    for z in (15.0, 55.0, 75.0, 500.0):
        t = np.array([0.0, 0, z])
        pl = g.ray_plane_intersect(g.GazeRay.through(cfg.eye_left, t), g.GazePlane(distance=35))
        pr = g.ray_plane_intersect(g.GazeRay.through(cfg.eye_right, t), g.GazePlane(distance=35))
        assert pr.x - pl.x == pytest.approx(g.disparity_from_depth(t, cfg), abs=1e-9)


def test_scene_layouts():
    s1, s2, cal = g.scene1_spec(), g.scene2_spec(), g.calibration_grid()
    assert len(s1.test_points) == 36
    assert len(s2.test_points) == 9
    assert len(cal.test_points) == 9
    assert s1.point(1).position[2] == 15.0
    assert sorted({tp.position[2] for tp in s1.test_points}) == [15.0, 35.0, 55.0, 75.0]
    assert g.depth_planes(s1) == [1, 2, 3, 4]
    assert s2.depth_unit == "m" and s2.unit_scale == 0.01
    assert np.all(cal.positions()[:, 2] == 35.0)
    assert max(s2.positions()[:, 2]) <= 790 + 1e-9


def test_scene_json_roundtrip():
    s = g.scene1_spec()
    back = g.SceneSpec.from_json(s.to_json())
    np.testing.assert_array_equal(back.positions(), s.positions())
    assert back.to_json() == s.to_json()


def test_scene_rejects_points_outside_workspace():
    with pytest.raises(ValueError):
        g.SceneSpec("x", (g.TestPoint(1, [100, 0, 10], 1),), (50, 30, 75))


def test_gaze_angle_roundtrip(rng):
    ang = rng.uniform(-40, 40, size=(50, 2))
    back = g.gaze_angles_batch(g.directions_from_angles(ang))
    np.testing.assert_allclose(back, ang, atol=1e-10)


def test_eye_ray_passes_through_target():
    ray = g.eye_ray([-3, 0, 0], [5, 2, 40])
    assert np.linalg.norm(ray.origin - np.array([-3, 0, 0])) == pytest.approx(1.2)
    t = (40 - ray.origin[2]) / ray.direction[2]
    np.testing.assert_allclose(ray.point_at(t), [5, 2, 40], atol=1e-12)


def test_batch_intersection_recovers_random_targets_fast(rng):
    cfg = g.BinocularConfig()
    n = 10_000
    targets = np.column_stack([rng.uniform(-25, 25, n), rng.uniform(-15, 15, n), rng.uniform(5, 75, n)])
    t0 = time.perf_counter()
    p = g.ray_intersection_depth_batch(*g.eye_rays_batch(cfg.eye_left, targets), *g.eye_rays_batch(cfg.eye_right, targets))
    assert time.perf_counter() - t0 < 1.0
    assert np.abs(p - targets).max() <= 1e-9


def test_batch_intersection_matches_scalar(rng):
    cfg = g.BinocularConfig()
    targets = np.column_stack([rng.uniform(-25, 25, 200), rng.uniform(-15, 15, 200), rng.uniform(5, 75, 200)])
    batch = g.ray_intersection_depth_batch(*g.eye_rays_batch(cfg.eye_left, targets),
                                           *g.eye_rays_batch(cfg.eye_right, targets))
    for t, pb in zip(targets, batch):
        ps = g.ray_intersection_depth(g.eye_ray(cfg.eye_left, t), g.eye_ray(cfg.eye_right, t))
        np.testing.assert_allclose(pb, ps, rtol=0, atol=1e-10)  # 1 - b^2 is ill-conditioned for far targets


def test_batch_intersection_rejects_parallel():
    d = np.array([[0.0, 0.0, 1.0]])
    with pytest.raises(RaysParallel):
        g.ray_intersection_depth_batch(np.zeros((1, 3)), d, np.array([[6.0, 0, 0]]), d)
