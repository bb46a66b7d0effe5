#!/usr/bin/env python3
"""
Tests for pose <-> curvature/acceleration conversions and rate estimation.
"""

import math
import os
import sys

import numpy as np
import pytest

# Add project root to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", ".."))

from errors import DomainError, SizeError
from kinematics import (
    EgoState,
    KaPoint,
    finite_diff_rates,
    ka_rollout,
    poses_to_ka,
    rate_arrays,
    rollout_ka,
    states_to_ka,
    wrap_angle,
)


def _line(n, v=2.0, dt=0.5, yaw=0.3, accel=0.0):
    t = np.arange(n) * dt
    s = v * t + 0.5 * accel * t**2
    return np.column_stack([s * math.cos(yaw), s * math.sin(yaw), np.full(n, yaw)])


def test_wrap_angle_examples():
    assert wrap_angle(0.0) == 0.0
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-3 * math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert isinstance(wrap_angle(1.0), float)


def test_wrap_angle_idempotent_and_periodic():
    rng = np.random.default_rng(0)
    x = rng.uniform(-50, 50, size=1000)
    w = wrap_angle(x)
    assert np.all(w > -math.pi) and np.all(w <= math.pi)
    assert np.allclose(wrap_angle(w), w)
    assert np.allclose(wrap_angle(x + 2 * math.pi * 3), w, atol=1e-9)


def test_wrap_angle_rejects_non_finite():
    with pytest.raises(DomainError):
        wrap_angle(float("nan"))


def test_ego_state_yaw_domain():
    EgoState(0.0, 0.0, math.pi)
    with pytest.raises(DomainError):
        EgoState(0.0, 0.0, -math.pi)


def test_straight_line_has_zero_ka():
    ka = poses_to_ka(_line(10))
    assert ka.shape == (8, 2)
    assert np.allclose(ka, 0.0, atol=1e-12)


def test_stationary_points_use_eps():
    poses = np.zeros((5, 3))
    ka = poses_to_ka(poses, 0.5, 0.1)
    assert np.allclose(ka, 0.0)


def test_states_to_ka_too_short():
    with pytest.raises(SizeError):
        states_to_ka([EgoState(0, 0, 0), EgoState(1, 0, 0)])


def test_circle_curvature_matches_radius():
    R, v, dt = 20.0, 5.0, 0.05
    omega = v / R
    t = np.arange(40) * dt
    poses = np.column_stack([R * np.sin(omega * t), R * (1 - np.cos(omega * t)), wrap_angle(omega * t)])
    ka = poses_to_ka(poses, dt)
    # chord speed underestimates arc speed by O(dt^2)
    assert np.allclose(ka[:, 0], 1.0 / R, rtol=1e-3)


def test_rollout_empty_and_straight():
    start = EgoState(1.0, 2.0, 0.5)
    assert ka_rollout(start, 3.0, []) == [start]
    poses = rollout_ka(np.array([0.0, 0.0, 0.0]), 2.0, np.zeros((4, 2)), 0.5)
    assert poses.shape == (5, 3)
    assert poses[-1, 0] == pytest.approx(4.0)
    assert np.allclose(poses[:, 1:], 0.0)


def test_rollout_clamps_speed_at_zero():
    poses = rollout_ka(np.zeros(3), 1.0, [[0.0, -5.0], [0.0, -5.0], [0.0, 1.0]], 0.5)
    # 0.5 m in the first step, then stopped until the acceleration step
    assert poses[1, 0] == pytest.approx(0.5)
    assert poses[2, 0] == pytest.approx(0.5)
    assert poses[3, 0] == pytest.approx(0.5)


def test_round_trip_is_exact_for_rollouts():
    rng = np.random.default_rng(1)
    ka = np.column_stack([rng.uniform(-0.05, 0.05, 9), rng.uniform(-0.5, 0.5, 9)])
    poses = rollout_ka(np.array([3.0, -1.0, 0.2]), 6.0, ka, 0.5)
    recovered = poses_to_ka(poses, 0.5)
    assert np.allclose(recovered, ka[:-1], atol=1e-9)
    again = rollout_ka(poses[0], 6.0, recovered, 0.5)
    assert np.allclose(again, poses[:-1], atol=1e-9)


def test_ka_is_rigid_motion_invariant():
    rng = np.random.default_rng(2)
    ka = np.column_stack([rng.uniform(-0.1, 0.1, 6), rng.uniform(-1, 1, 6)])
    poses = rollout_ka(np.zeros(3), 5.0, ka, 0.5)
    theta = 0.7
    c, s = math.cos(theta), math.sin(theta)
    moved = np.column_stack(
        [c * poses[:, 0] - s * poses[:, 1] + 10, s * poses[:, 0] + c * poses[:, 1] - 4, wrap_angle(poses[:, 2] + theta)]
    )
    assert np.allclose(poses_to_ka(moved), poses_to_ka(poses), atol=1e-9)


def test_rates_constant_velocity_and_acceleration():
    rates = finite_diff_rates(_line(8, v=3.0))
    assert len(rates) == 6
    assert all(abs(r.v - 3.0) < 1e-9 and abs(r.omega) < 1e-12 and abs(r.alpha) < 1e-12 for r in rates)
    accel = rate_arrays(_line(8, v=1.0, accel=1.0), 0.5)
    assert np.allclose(np.diff(accel[:, 0]), 0.5)
    assert np.allclose(accel[:, 3], 0.0, atol=1e-9)


def test_rates_polynomial_path():
    dt = 0.01
    t = np.arange(50) * dt
    x, y = 2 * t + t**2, 0.5 * t**2
    yaw = np.arctan2(t, 2 + 2 * t)
    rates = rate_arrays(np.column_stack([x, y, yaw]), dt)
    speed = np.hypot(2 + 2 * t, t)
    assert np.allclose(rates[:, 0], speed[:-2], atol=0.05)


def test_ka_point_is_a_value_type():
    assert KaPoint(0.1, 0.2) == KaPoint(0.1, 0.2)
