import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import box_grid
from evonav.agentpolicy import ScriptedPolicy, StaticPolicy
from evonav.errors import ConfigError
from evonav.mapgen import MapParams, generate_map, longest_path, open_arena
from evonav.pedsim import CircleWalkPolicy, LinearPolicy, PedParams
from evonav.simcore import (
    EpisodeConfig,
    VelocityEstimate,
    VelocityTracker,
    WorldState,
    assemble_input,
    count_collision_events,
    kalman_estimate,
    raycast,
    raycast_scan,
    read_records,
    run_episode,
    static_clearance,
    step_world,
    write_records,
)
from evonav.worldmodel import AgentState, Command, OccupancyGrid, Pose2D, grid_is_free, static_distance

ARENA = open_arena(20.0)[0]


# --- raycasting ---------------------------------------------------------------

def test_open_interior_reads_max_range():
    s = raycast(ARENA, Pose2D(10.0, 10.0), 360, 5.0)
    assert np.all(s.ranges == 5.0)


def test_flat_wall_range():
    occ = np.ones((60, 100), dtype=bool)
    occ[1:-1, 1:-1] = False
    occ[:, 50] = True  # wall face at x = 5.0
    g = OccupancyGrid(occ)
    s = raycast(g, Pose2D(3.0, 3.05), 360, 5.0)
    assert abs(s.ranges[0] - 2.0) <= g.resolution


def test_disc_range_is_exact():
    s = raycast(ARENA, Pose2D(10.0, 10.0), 360, 5.0, np.array([[11.0, 10.0, 0.3]]))
    assert s.ranges[0] == pytest.approx(0.7, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_ranges_hit_walls(seed):
    rng = np.random.default_rng(seed)
    grid, _ = generate_map(MapParams(room_number=3, seed=seed))
    cells = np.argwhere(grid.free)
    iy, ix = cells[rng.integers(len(cells))]
    pose = Pose2D(*grid.cell_center(ix, iy), float(rng.uniform(-3, 3)))
    s = raycast(grid, pose, 90, 5.0)
    for (x, y), r in zip(s.points, s.ranges):
        if r < 5.0:
            # the hit point lies on an occupied cell boundary
            assert static_distance(grid, x, y) < 1e-9


# --- stepping -----------------------------------------------------------------

def _world(x=5.0, y=5.0, heading=0.0, grid=ARENA, peds=()):
    return WorldState(grid, AgentState(x, y, radius=0.2, heading=heading), list(peds))


def test_zero_speed_still_moves_pedestrians():
    ped = (AgentState(3.0, 3.0, radius=0.3), LinearPolicy((1.0, 0.0)))
    w = step_world(_world(peds=[ped]), Command(0.0, 0.0))
    assert (w.ego.px, w.ego.py) == (5.0, 5.0)
    assert w.pedestrians[0][0].px == pytest.approx(3.1)


def test_euler_step():
    w = step_world(_world(), Command(1.0, 0.0))
    assert w.ego.px == pytest.approx(5.1) and w.ego.py == pytest.approx(5.0)
    assert not w.wall_contact


def test_turn_rate_limit():
    w = step_world(_world(), Command(0.0, math.pi))
    assert w.ego.heading == pytest.approx(2 * math.pi * 0.1)


def test_wall_stops_flush():
    g = box_grid(60, 60)  # wall face at x = 5.9
    w = _world(5.65, 3.0, grid=g)  # 0.05 m of room
    w = step_world(w, Command(1.0, 0.0), slide=False)
    assert w.wall_contact
    assert 5.65 + 0.05 - 1e-4 < w.ego.px <= 5.7
    assert static_clearance(w) < 0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_ego_never_enters_walls(seed):
    rng = np.random.default_rng(seed)
    grid, _ = generate_map(MapParams(room_number=2, corridor_width=0.2, seed=seed))
    cells = np.argwhere(~np.asarray(grid.center_edt < 4))
    iy, ix = cells[rng.integers(len(cells))]
    w = _world(*grid.cell_center(ix, iy), grid=grid)
    for _ in range(60):
        step_world(w, Command(1.0, float(rng.uniform(-math.pi, math.pi))))
        assert static_distance(grid, w.ego.px, w.ego.py) >= w.ego.radius - 1e-9
        assert grid_is_free(grid, (w.ego.px, w.ego.py))


# --- velocity estimation ---------------------------------------------------------

def _track(v, steps=20, dt=0.1, q=0.1):
    est = VelocityEstimate.initial((0.0, 0.0))
    errs = []
    for k in range(1, steps + 1):
        est = kalman_estimate(est, (v[0] * k * dt, v[1] * k * dt), dt, q)
        errs.append(float(np.linalg.norm(est.velocity - v)))
    return est, errs


def test_constant_velocity_recovered():
    est, _ = _track(np.array([1.0, 0.0]))
    assert np.linalg.norm(est.velocity - [1.0, 0.0]) < 1e-3


def test_stationary_target_goes_to_zero():
    est, errs = _track(np.array([0.0, 0.0]), 50)
    assert errs[-1] < 1e-9


@given(st.floats(-2, 2), st.floats(-2, 2))
def test_error_non_increasing_without_process_noise(vx, vy):
    # the constant-velocity model matched to the track: recursive least squares
    _, errs = _track(np.array([vx, vy]), 60, q=0.0)
    assert all(b <= a * (1 + 1e-9) + 1e-15 for a, b in zip(errs, errs[1:]))


def test_process_noise_makes_the_error_ring():
    # with q > 0 the steady-state gains are underdamped; the error changes sign
    _, errs = _track(np.array([1.0, 0.0]), 30, q=0.1)
    assert any(b > a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-9


def test_single_update_matches_hand_computation():
    prior = VelocityEstimate.initial((0.0, 0.0))
    dt, q, r = 0.1, 0.1, 1e-4
    post = kalman_estimate(prior, (0.1, 0.0), dt, q, r)
    # per-axis predicted covariance of (x, v)
    p_xx = r + dt * dt * 10.0 + q * dt ** 3 / 3
    p_xv = dt * 10.0 + q * dt ** 2 / 2
    gain_v = p_xv / (p_xx + r)
    assert post.velocity[0] == pytest.approx(gain_v * 0.1)
    assert post.velocity[1] == 0.0


def test_batched_tracker_matches_scalar_filter():
    tr = VelocityTracker(np.array([[0.0, 0.0], [1.0, 1.0]]))
    a, b = VelocityEstimate.initial((0, 0)), VelocityEstimate.initial((1, 1))
    for k in range(1, 10):
        pa, pb = (0.1 * k, 0.05 * k), (1.0 - 0.2 * k, 1.0)
        out = tr.update(np.array([pa, pb]), 0.1)
        a, b = kalman_estimate(a, pa, 0.1), kalman_estimate(b, pb, 0.1)
        assert np.allclose(out, [a.velocity, b.velocity], atol=1e-12)


# --- collisions -------------------------------------------------------------------

def test_collision_events():
    inf = math.inf
    assert count_collision_events([0.1] * 5, [inf] * 5) == 0
    assert count_collision_events([1] * 7, [1, 0.0, -0.2, -0.3, -0.1, 0.0, 1]) == 1
    assert count_collision_events([0.1, -0.01, -0.02, 0.1, 0.2, -0.01, 0.1], [inf] * 7) == 2
    assert count_collision_events([], []) == 0


def test_crossing_pedestrian_counts_once():
    w = _world(5.0, 5.0)
    w.pedestrians = [(AgentState(4.0, 5.0, radius=0.3), LinearPolicy((2.0, 0.0)))]
    d = []
    for _ in range(12):
        step_world(w, Command(0.0, 0.0))
        s, _ = w.pedestrians[0]
        d.append(math.hypot(s.px - 5.0, s.py - 5.0) - 0.5)
    assert sum(x < 0.05 for x in d) >= 5
    assert count_collision_events([1.0] * len(d), d) == 1


# --- episodes ---------------------------------------------------------------------

def test_spawned_at_goal():
    res = run_episode(ARENA, None, StaticPolicy(), Pose2D(5, 5), Pose2D(5.1, 5))
    assert res.success and res.duration == 0 and res.collisions == 0
    assert res.perf_trace == [1.0] and res.mean_perf == 1.0


def test_static_policy_times_out():
    cfg = EpisodeConfig(time_limit=5.0, n_beams=90)
    res = run_episode(ARENA, None, StaticPolicy(), Pose2D(5, 5), Pose2D(10, 5), cfg)
    assert not res.success and res.duration == 5.0


def test_straight_run_duration():
    res = run_episode(ARENA, None, ScriptedPolicy(), Pose2D(5, 10), Pose2D(10, 10), EpisodeConfig(n_beams=90))
    assert res.success
    assert res.duration == pytest.approx(5.0, rel=0.1)
    assert res.mean_perf == pytest.approx(math.fsum(res.perf_trace) / len(res.perf_trace), abs=1e-12)


def test_episode_is_deterministic():
    grid, graph = generate_map(MapParams(room_number=3, seed=5))
    s, g = longest_path(grid, graph)
    cfg = EpisodeConfig(time_limit=8.0, n_beams=90, record_trace=True)
    a = run_episode(grid, PedParams(6, 1.5, 0.5, 3), ScriptedPolicy(), s, g, cfg)
    b = run_episode(grid, PedParams(6, 1.5, 0.5, 3), ScriptedPolicy(), s, g, cfg)
    assert json.dumps(a.record()) == json.dumps(b.record())
    assert a.trace == b.trace


def test_ready_made_pedestrians_are_not_mutated():
    peds = [(AgentState(12.0, 12.0, radius=0.3), CircleWalkPolicy((11.0, 12.0), 1.0, 1.0))]
    run_episode(ARENA, peds, StaticPolicy(), Pose2D(5, 5), Pose2D(9, 5), EpisodeConfig(time_limit=2.0, n_beams=90))
    assert peds[0][0].px == 12.0 and peds[0][1].direction == 1


def test_config_validation():
    with pytest.raises(ConfigError):
        run_episode(ARENA, None, StaticPolicy(), Pose2D(5, 5), Pose2D(9, 5), EpisodeConfig(dt=0.0))
    with pytest.raises(ConfigError):
        EpisodeConfig(n_beams=4).validate()


def test_assemble_input_keeps_agents_in_range_nearest_first():
    ego = AgentState(0.0, 0.0)
    peds = np.array([[3.0, 0.0, 0.3], [1.0, 0.0, 0.3], [9.0, 0.0, 0.3]])
    vel = np.array([[0.1, 0.0], [0.2, 0.0], [0.3, 0.0]])
    inp = assemble_input(ego, (1.0, 1.0), peds, vel, 5.0)
    assert inp.others[:, 0].tolist() == [1.0, 3.0]
    assert inp.others[:, 2].tolist() == [0.2, 0.1]
    assert (inp.ego.gx, inp.ego.gy) == (1.0, 1.0)


def test_records_round_trip_and_truncation(tmp_path):
    res = run_episode(ARENA, None, StaticPolicy(), Pose2D(5, 5), Pose2D(5.1, 5))
    p = tmp_path / "r.jsonl"
    write_records(p, [res, res])
    assert len(read_records(p)) == 2
    with open(p, "a") as fh:
        fh.write('{"success": tr')
    assert len(read_records(p)) == 2
    p.write_text('{"a": 1}\nnot json\n{"b": 2}\n')
    with pytest.raises(ValueError, match=":2:"):
        read_records(p)


def test_scan_sees_pedestrians():
    w = _world(peds=[(AgentState(6.0, 5.0, radius=0.3), LinearPolicy((0.0, 0.0)))])
    assert raycast_scan(w, 360, 5.0).ranges[0] == pytest.approx(0.7)
