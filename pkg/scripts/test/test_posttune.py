#!/usr/bin/env python3
"""
Tests for trajectory post-tuning: lane maps and anchors, the Frenet frame,
the banded smoothers, yaw recomputation and the full pipeline.
"""

import math
import os
import sys

import numpy as np
import pytest
from scipy.optimize import isotonic_regression

# Add project root to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", ".."))

from bev_quantizer import BevClass
from errors import DomainError, PosttuneError, SizeError
from kinematics import wrap_angle
from posttune import (
    FrenetTrajectory,
    LaneLikelihoodMap,
    SmootherWeights,
    difference_operators,
    distance_to_polyline,
    frenet_lift,
    frenet_project,
    lane_anchor,
    posttune_pipeline,
    recompute_yaw,
    smoothing_matrix,
    smoothing_objective,
    solve_lateral,
    solve_longitudinal,
)

STRAIGHT = np.array([[-10.0, 0.0], [40.0, 0.0]])


def _straight_map():
    return LaneLikelihoodMap.from_reference(STRAIGHT, (0.0, 20.0), (-5.0, 5.0), 0.5)


def test_lane_map_validation():
    with pytest.raises(DomainError):
        LaneLikelihoodMap(np.full((3, 3), 2.0), 0.5, 0.0, 0.0)
    with pytest.raises(SizeError):
        LaneLikelihoodMap(np.zeros((0, 3)), 0.5, 0.0, 0.0)


def test_lane_map_from_raster_peaks_on_center_band():
    cells = np.full((16, 16), BevClass.DRIVABLE, dtype=np.uint8)
    cells[:, 4:6] = BevClass.CENTER_BAND
    lane_map = LaneLikelihoodMap.from_bev_raster(cells, 1.0)
    on_band = lane_map.sample(lane_map.to_cell([0.0, 3.0]))
    off_band = lane_map.sample(lane_map.to_cell([0.0, -3.0]))
    assert on_band > 0.5 > off_band


def test_anchor_on_flat_map_stays_put_and_outside_is_flagged():
    flat = LaneLikelihoodMap(np.full((10, 10), 0.5), 1.0, 0.0, 0.0)
    anchor, flagged = lane_anchor(flat, [3.2, 4.7])
    assert not flagged
    assert np.allclose(anchor, [3.2, 4.7])
    anchor, flagged = lane_anchor(flat, [30.0, 4.0])
    assert flagged
    assert np.allclose(anchor, [30.0, 4.0])


def test_anchor_climbs_toward_the_lane_center():
    anchor, flagged = lane_anchor(_straight_map(), [5.0, 1.0])
    assert not flagged
    assert abs(anchor[1]) < 1.0
    assert anchor[0] == pytest.approx(5.0, abs=1e-6)


def test_frenet_round_trip_on_a_corner():
    reference = np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 10.0]])
    points = np.array([[3.0, 1.0], [7.0, -0.5], [11.0, 5.0], [9.0, 8.0]])
    frenet = frenet_project(points, reference)
    assert frenet.s[0] == pytest.approx(3.0) and frenet.l[0] == pytest.approx(1.0)
    assert frenet.s[2] == pytest.approx(15.0) and frenet.l[2] == pytest.approx(-1.0)
    assert np.allclose(frenet_lift(frenet, reference), points)


def test_frenet_extrapolates_past_the_ends():
    frenet = frenet_project([[-12.0, 0.5], [45.0, -1.0]], STRAIGHT)
    assert np.allclose(frenet.s, [-2.0, 55.0])
    lifted = frenet_lift(frenet, STRAIGHT)
    assert np.allclose(lifted, [[-12.0, 0.5], [45.0, -1.0]])


def test_distance_to_polyline():
    d = distance_to_polyline([[5.0, 3.0], [-13.0, 4.0]], STRAIGHT)
    assert np.allclose(d, [3.0, 5.0])


def test_difference_operators():
    d1, d2 = difference_operators(5)
    assert d1.shape == (4, 5) and d2.shape == (3, 5)
    line = np.arange(5.0)
    assert np.allclose(d1 @ line, 1.0)
    assert np.allclose(d2 @ line, 0.0)
    with pytest.raises(SizeError):
        smoothing_matrix(2, 1.0, 1.0)


def test_lateral_solution_is_the_minimizer():
    rng = np.random.default_rng(0)
    gap = rng.normal(size=12)
    delta = solve_lateral(gap, 0.5, 2.0)
    assert np.allclose(smoothing_matrix(12, 0.5, 2.0) @ delta, gap)
    best = smoothing_objective(delta, gap, 0.5, 2.0)
    for _ in range(20):
        nearby = delta + 1e-3 * rng.normal(size=12)
        assert smoothing_objective(nearby, gap, 0.5, 2.0) >= best
    assert np.allclose(solve_lateral(np.zeros(6), 0.5, 2.0), 0.0)


def test_banded_solves_match_dense_solves():
    rng = np.random.default_rng(1)
    for n in (3, 10, 50, 200):
        dense = smoothing_matrix(n, 0.7, 2.0).toarray()
        gap = rng.normal(size=n)
        expected = np.linalg.solve(dense, gap)
        assert np.linalg.norm(solve_lateral(gap, 0.7, 2.0) - expected) <= 1e-8 * np.linalg.norm(expected)
        s_raw = np.cumsum(rng.uniform(0.0, 3.0, size=n))
        expected = isotonic_regression(np.linalg.solve(dense, s_raw), increasing=True).x
        assert np.linalg.norm(solve_longitudinal(s_raw, 0.7, 2.0) - expected) <= 1e-8 * np.linalg.norm(expected)


def test_lateral_solution_beats_zero_and_snap_on_random_instances():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        n = int(rng.integers(3, 30))
        w1, w2 = rng.uniform(0.0, 5.0, size=2)
        gap = rng.normal(scale=2.0, size=n)
        best = smoothing_objective(solve_lateral(gap, w1, w2), gap, w1, w2)
        assert best <= smoothing_objective(np.zeros(n), gap, w1, w2) + 1e-9
        assert best <= smoothing_objective(gap, gap, w1, w2) + 1e-9


def test_linear_arc_length_is_a_fixed_point():
    s_raw = 3.0 + 2.5 * np.arange(8)
    assert np.max(np.abs(solve_longitudinal(s_raw, 0.0, 1.0) - s_raw)) <= 1e-9


def test_longitudinal_output_is_monotone():
    s_raw = np.array([0.0, 2.0, 1.0, 3.0, 2.5, 6.0, 5.0, 9.0])
    s = solve_longitudinal(s_raw, 0.0, 0.01)
    assert np.all(np.diff(s) >= -1e-12)


def test_recompute_yaw_follows_heading_and_respects_rate_limit():
    diag = np.column_stack([np.arange(5.0), np.arange(5.0)])
    assert np.allclose(recompute_yaw(diag, 0.3), math.pi / 4)
    corner = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [2.0, 1.0], [2.0, 2.0], [2.0, 3.0], [2.0, 4.0], [2.0, 5.0]])
    yaw = recompute_yaw(corner, 0.3, initial_yaw=0.0)
    assert np.all(np.abs(wrap_angle(np.diff(yaw))) <= 0.3 + 1e-12)
    assert yaw[-1] == pytest.approx(math.pi / 2)
    stopped = recompute_yaw(np.array([[0.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 1.0]]), 1.0)
    assert np.allclose(stopped, math.pi / 2)


def test_pipeline_leaves_a_centered_constant_speed_path_unchanged():
    weights = SmootherWeights(w_s1=0.0)
    path = np.column_stack([2.0 + 2.0 * np.arange(8), np.zeros(8), np.zeros(8)])
    result = posttune_pipeline(path, _straight_map(), STRAIGHT, weights, initial_yaw=0.0)
    assert np.max(np.abs(result.poses - path)) <= 1e-9
    assert result.diagnostics["flagged_anchors"] == 0


def test_pipeline_on_a_zig_zag_is_optimal_and_rate_limited():
    weights = SmootherWeights(w_l1=0.0)
    x = 2.0 + 2.0 * np.arange(8)
    y = 0.5 * (-1.0) ** np.arange(8)
    result = posttune_pipeline(np.column_stack([x, y]), _straight_map(), STRAIGHT, weights, initial_yaw=0.0)
    diag = result.diagnostics
    assert diag["lateral_objective"] <= diag["lateral_objective_zero"] + 1e-12
    assert diag["lateral_objective"] <= diag["lateral_objective_snap"] + 1e-12
    assert np.all(np.abs(wrap_angle(np.diff(result.poses[:, 2]))) <= weights.yaw_rate_limit + 1e-12)
    assert isinstance(result.frenet, FrenetTrajectory) and len(result.frenet) == 8


def test_pipeline_failures_name_the_stage():
    with pytest.raises(PosttuneError) as excinfo:
        posttune_pipeline([[1.0, 0.0], [2.0, 0.0]], _straight_map(), STRAIGHT)
    assert excinfo.value.stage == "lateral"
    with pytest.raises(PosttuneError) as excinfo:
        posttune_pipeline([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]], _straight_map(), [[0.0, 0.0], [0.0, 0.0]])
    assert excinfo.value.stage == "frenet"


def test_trajectory_as_frenet_reference_keeps_anchored_points():
    flat = LaneLikelihoodMap(np.full((40, 40), 0.5), 1.0, 0.0, 0.0)
    path = np.column_stack([2.0 + 2.0 * np.arange(8), 5.0 + 0.5 * (-1.0) ** np.arange(8)])
    weights = SmootherWeights(w_s1=0.0, frenet_reference="trajectory")
    result = posttune_pipeline(path, flat, STRAIGHT, weights)
    assert np.allclose(result.frenet.l, 0.0, atol=1e-12)
    assert np.max(np.abs(result.poses[:, :2] - path)) <= 1e-9


def test_second_pass_barely_moves_a_refined_path():
    rng = np.random.default_rng(11)
    x = 1.0 + 1.5 * np.arange(10) + rng.normal(0.0, 0.2, 10)
    y = rng.normal(0.0, 0.6, 10)
    first = posttune_pipeline(np.column_stack([x, y]), _straight_map(), STRAIGHT, initial_yaw=0.0)
    second = posttune_pipeline(first.poses, _straight_map(), STRAIGHT, initial_yaw=0.0)
    moved = first.diagnostics["max_displacement"]
    assert moved > 0
    assert second.diagnostics["max_displacement"] <= 10.0 * moved + 1e-9
