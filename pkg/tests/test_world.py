import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swarmsim.errors import InvalidPoseError, ScenarioError
from swarmsim.world import (CameraParams, EnvironmentMap, Pose2D, SaturationLimits, camera_fov,
                            parse_scenario, point_in_fov, points_in_fov, raycast, saturate,
                            scenario_to_text, step_kinematics, wrap_angle)

from helpers import box_env

angles = st.floats(-50.0, 50.0, allow_nan=False)


def march(env, pose, angle, max_range, step=1e-4):
    """Brute-force ray marching: first sample point inside an occupied cell."""
    dx, dy = math.cos(pose.theta + angle), math.sin(pose.theta + angle)
    n = int(max_range / step)
    for k in range(1, n + 1):
        t = k * step
        if not env.is_free(pose.x + t * dx, pose.y + t * dy):
            return t, True
    return max_range, False


# ---------------------------------------------------------------- angles and poses

@given(angles)
def test_wrap_angle_range(a):
    w = wrap_angle(a)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)
    assert math.isclose(math.sin(w), math.sin(a), abs_tol=1e-9)


def test_wrap_angle_pi_stays_pi():
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == math.pi


@given(st.floats(-5, 5), st.floats(-5, 5), angles)
def test_pose_inverse_roundtrip(x, y, th):
    p = Pose2D(x, y, th)
    q = p.compose(p.inverse())
    assert abs(q.x) < 1e-9 and abs(q.y) < 1e-9 and abs(wrap_angle(q.theta)) < 1e-9


# ---------------------------------------------------------------- scenarios

def test_scenario_top_row_is_max_y():
    text = "resolution=0.5\n#####\n#...#\n#.#.#\n#####\n"
    env = parse_scenario(text)
    assert env.width_cells == 5 and env.height_cells == 4
    # the '#' in the third text line sits in array row 1 (second from the bottom)
    assert env.occupied[1, 2] and not env.occupied[2, 2]
    assert env.resolution == 0.5


def test_scenario_roundtrip():
    env = box_env(12, 9)
    back = parse_scenario(scenario_to_text(env))
    assert np.array_equal(back.occupied, env.occupied) and back.resolution == env.resolution


def test_unclosed_world_rejected():
    with pytest.raises(ScenarioError):
        parse_scenario("resolution=0.1\n####\n#...\n####\n")


def test_missing_header_rejected():
    with pytest.raises(ScenarioError):
        parse_scenario("####\n#..#\n####\n")


def test_bad_characters_rejected():
    with pytest.raises(ScenarioError):
        parse_scenario("resolution=0.1\n####\n#x.#\n####\n")


def test_nonpositive_resolution_rejected():
    with pytest.raises(ScenarioError):
        EnvironmentMap(np.ones((3, 3), bool), 0.0)


def test_bundled_scenarios_load():
    from importlib import resources
    from swarmsim.world import load_scenario
    for name in ("two_rooms.txt", "single_room.txt"):
        env = load_scenario(resources.files("swarmsim") / "scenarios" / name)
        assert env.is_closed()


# ---------------------------------------------------------------- raycast

def test_raycast_axis_aligned_wall():
    # 10 m x 10 m interior: free cells span [0.1, 10.1)
    env = box_env(102, 102, resolution=0.1)
    pose = Pose2D(5.1, 5.1, 0.0)
    scan = raycast(env, pose, [0.0], max_range=8.0)
    assert scan.hit_flags[0]
    assert abs(scan.ranges[0] - 5.0) <= env.resolution


def test_raycast_max_range_sentinel():
    env = box_env(142, 142, resolution=0.1)
    scan = raycast(env, Pose2D(7.1, 7.1, 0.0), [0.0], max_range=4.0)
    assert scan.ranges[0] == 4.0 and not scan.hit_flags[0]


def test_raycast_diagonal_against_marching_oracle():
    env = box_env(50, 50, resolution=0.1)
    # 1 m from the left wall face at x = 0.1, beam 45 degrees off the wall normal
    pose = Pose2D(1.1, 2.5, math.pi)
    scan = raycast(env, pose, [-math.pi / 4], max_range=4.0)
    assert abs(scan.ranges[0] - math.sqrt(2.0)) <= env.resolution
    ref, _ = march(env, pose, -math.pi / 4, 4.0)
    assert abs(scan.ranges[0] - ref) < 1e-3


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_raycast_matches_marching_on_random_worlds(seed):
    rng = np.random.default_rng(seed)
    occ = rng.uniform(size=(30, 30)) < 0.12
    occ[0, :] = occ[-1, :] = occ[:, 0] = occ[:, -1] = True
    env = EnvironmentMap(occ, 0.1)
    free = np.argwhere(~occ)
    iy, ix = free[rng.integers(len(free))]
    pose = Pose2D((ix + rng.uniform(0.05, 0.95)) * 0.1, (iy + rng.uniform(0.05, 0.95)) * 0.1,
                  rng.uniform(-math.pi, math.pi))
    beams = rng.uniform(-math.pi, math.pi, 6)
    scan = raycast(env, pose, beams, max_range=2.0)
    for a, r, h in zip(beams, scan.ranges, scan.hit_flags):
        ref, ref_hit = march(env, pose, a, 2.0, step=5e-4)
        # marching cannot see earlier through cells, only skip corner clips
        assert r <= ref + 1e-9
        d = (math.cos(pose.theta + a), math.sin(pose.theta + a))
        if h:
            assert not env.is_free(pose.x + (r + 1e-7) * d[0], pose.y + (r + 1e-7) * d[1])
        clear, _ = march(env, pose, a, r - 1e-7, step=5e-4) if r > 1e-3 else (r, False)
        assert clear >= r - 1e-7 - 5e-4
        if abs(r - ref) > env.resolution:
            # a corner clip the marcher stepped over: the occupied stretch is tiny
            assert march(env, pose, a, r + 1e-3, step=1e-6)[1]


def test_raycast_invalid_pose():
    env = box_env(20, 20)
    with pytest.raises(InvalidPoseError):
        raycast(env, Pose2D(0.05, 0.05, 0.0))
    with pytest.raises(InvalidPoseError):
        raycast(env, Pose2D(-1.0, 1.0, 0.0))


def test_scan_invariants_with_noise():
    env = box_env(60, 40)
    rng = np.random.default_rng(3)
    for _ in range(50):
        scan = raycast(env, Pose2D(3.0, 2.0, rng.uniform(-3, 3)), np.linspace(-3, 3, 8), 2.5, 0.05, rng)
        assert np.all(scan.ranges > 0) and np.all(scan.ranges <= scan.max_range)
        assert np.array_equal(~scan.hit_flags, scan.ranges == scan.max_range)


# ---------------------------------------------------------------- camera

def test_fov_identity_orientation():
    f = camera_fov(Pose2D(0, 0, 0), CameraParams(1.0, 1, 1))
    np.testing.assert_allclose(f.center, [1, 0])
    np.testing.assert_allclose(f.v1, [1, 0])
    np.testing.assert_allclose(f.v2, [0, 1])


def test_fov_quarter_turn():
    f = camera_fov(Pose2D(0, 0, math.pi / 2), CameraParams(1.0, 1, 1))
    np.testing.assert_allclose(f.center, [0, 1], atol=1e-15)
    np.testing.assert_allclose(f.v1, [0, 1], atol=1e-15)
    np.testing.assert_allclose(f.v2, [-1, 0], atol=1e-15)


def test_fov_diagonal_center():
    f = camera_fov(Pose2D(2, 3, math.pi / 4), CameraParams(math.sqrt(2), 1, 1))
    np.testing.assert_allclose(f.center, [3, 4], atol=1e-12)


def test_point_in_fov_examples():
    f = camera_fov(Pose2D(0, 0, 0), CameraParams(1.0, w=2.0, l=1.0))
    assert point_in_fov(f, f.center)
    assert point_in_fov(f, (1.0, 0.5))       # lateral boundary, inclusive
    assert point_in_fov(f, (2.0, 0.0))       # forward boundary, inclusive
    assert not point_in_fov(f, (2.1, 0.0))
    assert not point_in_fov(f, (1.0, 0.6))


def test_camera_params_validation():
    with pytest.raises(ValueError):
        CameraParams(-0.1, 1, 1)
    with pytest.raises(ValueError):
        CameraParams(0.1, 0, 1)


@given(st.floats(-3, 3), st.floats(-3, 3), angles, st.floats(-3, 3), st.floats(-3, 3),
       st.floats(-3, 3), st.floats(-3, 3), angles)
def test_point_in_fov_rigid_invariance(x, y, th, qx, qy, tx, ty, phi):
    cam = CameraParams(0.4, 0.9, 0.5)
    pose = Pose2D(x, y, th)
    g = Pose2D(tx, ty, phi)
    moved = g.compose(pose)
    c, s = math.cos(phi), math.sin(phi)
    q2 = (tx + c * qx - s * qy, ty + s * qx + c * qy)
    f1, f2 = camera_fov(pose, cam), camera_fov(moved, cam)
    # skip points within rounding distance of the boundary
    d = np.array([qx, qy]) - f1.center
    margin = min(abs(abs(d @ f1.v1) - cam.w / 2), abs(abs(d @ f1.v2) - cam.l / 2))
    if margin > 1e-9:
        assert point_in_fov(f1, (qx, qy)) == point_in_fov(f2, q2)


def test_points_in_fov_matches_scalar():
    rng = np.random.default_rng(0)
    f = camera_fov(Pose2D(0.3, -0.2, 0.7), CameraParams(0.3, 0.6, 0.4))
    xs, ys = rng.uniform(-1, 1.5, (2, 40, 40))
    vec = points_in_fov(f, xs, ys)
    ref = np.array([[point_in_fov(f, (a, b)) for a, b in zip(ra, rb)] for ra, rb in zip(xs, ys)])
    assert np.array_equal(vec, ref)


# ---------------------------------------------------------------- kinematics

def test_zero_input_keeps_pose():
    p = Pose2D(1.0, 2.0, 0.3)
    assert step_kinematics(p, (0, 0), 0.0, 0.1) == p


def test_translation_saturates_radially():
    p = step_kinematics(Pose2D(0, 0, 0), (10, 0), 0.0, 1.0, SaturationLimits(S_x=0.5))
    assert p.x == pytest.approx(0.5) and p.y == 0.0
    u, _ = saturate((3.0, 4.0), 0.0, SaturationLimits(S_x=1.0))
    np.testing.assert_allclose(u, [0.6, 0.8])


def test_heading_wraps():
    p = step_kinematics(Pose2D(0, 0, 3.0), (0, 0), 0.5, 1.0, SaturationLimits(S_theta=1.0))
    assert p.theta == pytest.approx(3.5 - 2 * math.pi)


@given(st.floats(-20, 20), st.floats(-20, 20), st.floats(-20, 20), angles, st.floats(1e-3, 2.0))
def test_step_respects_limits(ux, uy, w, th, dt):
    lim = SaturationLimits(0.3, 1.0)
    p = Pose2D(0.0, 0.0, th)
    q = step_kinematics(p, (ux, uy), w, dt, lim)
    assert math.hypot(q.x - p.x, q.y - p.y) <= lim.S_x * dt * (1 + 1e-12)
    assert abs(wrap_angle(q.theta - p.theta)) <= lim.S_theta * dt * (1 + 1e-9) + 1e-12
    assert -math.pi < q.theta <= math.pi


def test_saturation_limits_validation():
    with pytest.raises(ValueError):
        SaturationLimits(0.0, 1.0)
    with pytest.raises(ValueError):
        step_kinematics(Pose2D(0, 0, 0), (0, 0), 0, dt=0.0)
