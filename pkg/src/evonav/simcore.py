"""World stepping, laser scans, velocity tracking, collision counting and scored episodes."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np

from . import seeding
from .errors import ConfigError
from .navplan import GlobalPlan, PlannerConfig, WaypointPlanner
from .pedsim import PedParams, PedPolicy, advance_pedestrian, spawn_pedestrians
from .perfscore import PerfInputs, episode_perf, episode_return, perf_step
from .worldmodel import (
    DEFAULT_R_MAX,
    DEFAULT_R_ROBOT,
    AgentState,
    Command,
    LaserScan,
    OccupancyGrid,
    Pose2D,
    normalize_angle,
    static_distance,
)

RANGE_EPS = 1e-6
TURN_RATE = 2.0 * math.pi  # rad/s
PROCESS_NOISE = 0.1
MEASUREMENT_NOISE = 1e-4


# --- raycasting --------------------------------------------------------------

@numba.njit(cache=True)
def _cast_grid(occ, res, ox, oy, px, py, angles, r_max, out):
    h, w = occ.shape
    for k in range(angles.shape[0]):
        dx = math.cos(angles[k])
        dy = math.sin(angles[k])
        ix = int(math.floor((px - ox) / res))
        iy = int(math.floor((py - oy) / res))
        if ix < 0 or iy < 0 or ix >= w or iy >= h or occ[iy, ix]:
            out[k] = 0.0
            continue
        if dx > 0:
            step_x = 1
            t_max_x = (ox + (ix + 1) * res - px) / dx
            t_dx = res / dx
        elif dx < 0:
            step_x = -1
            t_max_x = (ox + ix * res - px) / dx
            t_dx = -res / dx
        else:
            step_x = 0
            t_max_x = math.inf
            t_dx = math.inf
        if dy > 0:
            step_y = 1
            t_max_y = (oy + (iy + 1) * res - py) / dy
            t_dy = res / dy
        elif dy < 0:
            step_y = -1
            t_max_y = (oy + iy * res - py) / dy
            t_dy = -res / dy
        else:
            step_y = 0
            t_max_y = math.inf
            t_dy = math.inf
        hit = r_max
        while True:
            if t_max_x < t_max_y:
                t = t_max_x
                ix += step_x
                t_max_x += t_dx
            else:
                t = t_max_y
                iy += step_y
                t_max_y += t_dy
            if t >= r_max:
                break
            if ix < 0 or iy < 0 or ix >= w or iy >= h or occ[iy, ix]:
                hit = t
                break
        out[k] = hit


@numba.njit(cache=True)
def _cast_discs(px, py, angles, cx, cy, cr, out):
    for k in range(angles.shape[0]):
        dx = math.cos(angles[k])
        dy = math.sin(angles[k])
        best = out[k]
        for j in range(cx.shape[0]):
            fx = px - cx[j]
            fy = py - cy[j]
            b = fx * dx + fy * dy
            c = fx * fx + fy * fy - cr[j] * cr[j]
            if c <= 0.0:
                best = 0.0
                continue
            disc = b * b - c
            if disc < 0.0 or b > 0.0:
                continue
            t = -b - math.sqrt(disc)
            if t < best:
                best = t
        out[k] = best


def raycast(grid: OccupancyGrid, pose: Pose2D, n_beams: int = 360, r_max: float = DEFAULT_R_MAX,
            discs: np.ndarray | None = None) -> LaserScan:
    """Noiseless 360 degree scan from ``pose``; ``discs`` is an optional (K, 3) array of circles."""
    angles = pose.heading + 2.0 * np.pi * np.arange(n_beams) / n_beams
    out = np.empty(n_beams)
    _cast_grid(grid.occupied, grid.resolution, grid.origin[0], grid.origin[1], pose.x, pose.y, angles, r_max, out)
    if discs is not None and len(discs):
        d = np.asarray(discs, dtype=float)
        _cast_discs(pose.x, pose.y, angles, d[:, 0].copy(), d[:, 1].copy(), d[:, 2].copy(), out)
    np.clip(out, RANGE_EPS, r_max, out=out)
    return LaserScan(out, r_max, pose)


# --- world ----------------------------------------------------------------------

@dataclass
class WorldState:
    grid: OccupancyGrid
    ego: AgentState
    pedestrians: list[tuple[AgentState, PedPolicy]]
    dt: float = 0.1
    steps: int = 0
    wall_contact: bool = False
    g_attempt: float = math.inf  # static clearance of the attempted (refused) pose when blocked

    @property
    def time(self) -> float:
        return round(self.steps * self.dt, 9)

    def ped_discs(self) -> np.ndarray:
        if not self.pedestrians:
            return np.zeros((0, 3))
        return np.array([[s.px, s.py, s.radius] for s, _ in self.pedestrians])


def raycast_scan(world: WorldState, n_beams: int = 360, r_max: float = DEFAULT_R_MAX) -> LaserScan:
    return raycast(world.grid, world.ego.pose, n_beams, r_max, world.ped_discs())


def _clear(grid, x, y, r) -> float:
    return static_distance(grid, x, y) - r


def _advance(grid: OccupancyGrid, x, y, dx, dy, r, sample: float = 0.02):
    """Move (x, y) by (dx, dy) as far as the disc of radius ``r`` stays off the walls.

    Returns the reached point, whether the move was cut short, and the clearance at
    the first failing sample (inf if none).
    """
    dist = math.hypot(dx, dy)
    if dist == 0.0:
        return x, y, False, math.inf
    c0 = _clear(grid, x, y, r)
    n = max(1, int(math.ceil(dist / sample)))
    lo = 0.0
    for k in range(1, n + 1):
        s = k / n
        c = _clear(grid, x + s * dx, y + s * dy, r)
        if c < 0.0 and c < c0:
            hi = s
            g_fail = c
            break
        lo = s
    else:
        return x + dx, y + dy, False, math.inf
    for _ in range(20):
        mid = 0.5 * (lo + hi)
        c = _clear(grid, x + mid * dx, y + mid * dy, r)
        if c < 0.0 and c < c0:
            hi = mid
        else:
            lo = mid
    return x + lo * dx, y + lo * dy, True, g_fail


def step_world(world: WorldState, command: Command, slide: bool = True) -> WorldState:
    """Advance the world one ``dt`` in place and return it.

    The ego turns toward the commanded heading at no more than 2*pi rad/s,
    then moves ``speed * dt``; a move into a wall stops flush (optionally
    sliding along the free axis) and raises ``wall_contact``.
    """
    ego = world.ego
    dt = world.dt
    cmd = command.clamped(ego.v_pref)
    turn = max(-TURN_RATE * dt, min(TURN_RATE * dt, normalize_angle(cmd.heading - ego.heading)))
    heading = normalize_angle(ego.heading + turn)
    dx, dy = cmd.speed * dt * math.cos(heading), cmd.speed * dt * math.sin(heading)
    x, y, blocked, g_fail = _advance(world.grid, ego.px, ego.py, dx, dy, ego.radius)
    if blocked and slide:
        rx, ry = ego.px + dx - x, ego.py + dy - y
        for sx, sy in (((rx, 0.0), (0.0, ry)) if abs(rx) >= abs(ry) else ((0.0, ry), (rx, 0.0))):
            x, y, _, _ = _advance(world.grid, x, y, sx, sy, ego.radius)
    vx, vy = (x - ego.px) / dt, (y - ego.py) / dt
    world.ego = AgentState(x, y, vx, vy, ego.radius, ego.gx, ego.gy, ego.v_pref, heading)
    world.wall_contact = blocked
    world.g_attempt = g_fail
    world.pedestrians = [(advance_pedestrian(world.grid, s, p, dt), p) for s, p in world.pedestrians]
    world.steps += 1
    return world


def dynamic_clearance(world: WorldState) -> float:
    if not world.pedestrians:
        return math.inf
    d = world.ped_discs()
    e = world.ego
    return float(np.min(np.hypot(d[:, 0] - e.px, d[:, 1] - e.py) - d[:, 2]) - e.radius)


def static_clearance(world: WorldState) -> float:
    """Signed wall clearance of the step; a refused wall move reports the attempted penetration."""
    g = _clear(world.grid, world.ego.px, world.ego.py, world.ego.radius)
    if world.wall_contact:
        g = min(g, world.g_attempt)
    return g


# --- velocity estimation ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class VelocityEstimate:
    """Constant-velocity Kalman state ``[x, y, vx, vy]`` with its covariance."""

    mean: np.ndarray
    cov: np.ndarray

    @property
    def velocity(self) -> np.ndarray:
        return self.mean[2:4]

    @classmethod
    def initial(cls, position, velocity_var: float = 10.0, position_var: float = MEASUREMENT_NOISE):
        m = np.array([position[0], position[1], 0.0, 0.0])
        return cls(m, np.diag([position_var, position_var, velocity_var, velocity_var]))


def _cv_matrices(dt: float, q: float):
    F = np.eye(4)
    F[0, 2] = F[1, 3] = dt
    a, b, c = dt ** 3 / 3.0, dt ** 2 / 2.0, dt
    Q = q * np.array([[a, 0, b, 0], [0, a, 0, b], [b, 0, c, 0], [0, b, 0, c]])
    return F, Q


def kalman_estimate(prior: VelocityEstimate, observed_position, dt: float,
                    q: float = PROCESS_NOISE, r: float = MEASUREMENT_NOISE) -> VelocityEstimate:
    """One predict-update cycle with a position-only measurement."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    F, Q = _cv_matrices(dt, q)
    m = F @ prior.mean
    P = F @ prior.cov @ F.T + Q
    S = P[:2, :2] + r * np.eye(2)
    K = P[:, :2] @ np.linalg.inv(S)
    m = m + K @ (np.asarray(observed_position, dtype=float) - m[:2])
    P = P - K @ P[:2, :]
    P = 0.5 * (P + P.T)
    return VelocityEstimate(m, P)


class VelocityTracker:
    """Batched filter over a fixed set of tracks (one per pedestrian)."""

    def __init__(self, positions: np.ndarray, q: float = PROCESS_NOISE, r: float = MEASUREMENT_NOISE):
        k = len(positions)
        self.q, self.r = q, r
        self.mean = np.zeros((k, 4))
        self.mean[:, :2] = positions
        self.cov = np.tile(np.diag([r, r, 10.0, 10.0]), (k, 1, 1))

    def update(self, positions: np.ndarray, dt: float) -> np.ndarray:
        if len(positions) == 0:
            return np.zeros((0, 2))
        F, Q = _cv_matrices(dt, self.q)
        m = self.mean @ F.T
        P = F @ self.cov @ F.T + Q
        S = P[:, :2, :2] + self.r * np.eye(2)
        det = S[:, 0, 0] * S[:, 1, 1] - S[:, 0, 1] * S[:, 1, 0]
        S_inv = np.stack([np.stack([S[:, 1, 1], -S[:, 0, 1]], -1), np.stack([-S[:, 1, 0], S[:, 0, 0]], -1)], 1)
        K = P[:, :, :2] @ (S_inv / det[:, None, None])
        m = m + np.einsum("kij,kj->ki", K, positions - m[:, :2])
        P = P - K @ P[:, :2, :]
        self.mean, self.cov = m, 0.5 * (P + np.transpose(P, (0, 2, 1)))
        return self.mean[:, 2:4].copy()


# --- collisions -------------------------------------------------------------------

def count_collision_events(
    g_static: Sequence[float],
    d_dynamic: Sequence[float],
    wall_threshold: float = 0.0,
    ped_threshold: float = 0.05,
) -> int:
    """Number of maximal runs of steps with either clearance under its threshold."""
    bad = (np.asarray(g_static, dtype=float) < wall_threshold) | (np.asarray(d_dynamic, dtype=float) < ped_threshold)
    if bad.size == 0:
        return 0
    return int(bad[0]) + int(np.count_nonzero(bad[1:] & ~bad[:-1]))


# --- episodes ----------------------------------------------------------------------

@dataclass(frozen=True)
class EpisodeConfig:
    dt: float = 0.1
    goal_radius: float = 0.3
    time_limit: float = 30.0
    n_beams: int = 360
    r_max: float = DEFAULT_R_MAX
    r_robot: float = DEFAULT_R_ROBOT
    v_pref: float = 1.0
    use_planner: bool = True
    terminal_wall: bool = False
    slide: bool = True
    wall_threshold: float = 0.0
    ped_threshold: float = 0.05
    record_trace: bool = False
    start_heading: float | None = None  # None: face the goal

    def validate(self):
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if not self.time_limit >= self.dt:
            raise ConfigError("time_limit must cover at least one step")
        if not self.goal_radius > 0:
            raise ConfigError("goal_radius must be positive")
        if self.n_beams < 8:
            raise ConfigError("n_beams must be at least 8")
        if not (self.r_max > 0 and self.r_robot > 0 and self.v_pref > 0):
            raise ConfigError("r_max, r_robot and v_pref must be positive")
        if self.ped_threshold < 0:
            raise ConfigError("ped_threshold must be non-negative")


@dataclass
class EpisodeResult:
    success: bool
    duration: float
    collisions: int
    perf_trace: list[float]
    mean_perf: float
    total_perf: float
    seeds: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    trace: list[dict] | None = None

    def record(self) -> dict:
        return {
            "seed": self.seeds,
            "params": self.params,
            "success": self.success,
            "duration": self.duration,
            "collisions": self.collisions,
            "mean_perf": self.mean_perf,
            "total_perf": self.total_perf,
            "steps": len(self.perf_trace),
        }


@dataclass(frozen=True, eq=False)
class PolicyInput:
    """What the collision-avoidance policy sees.

    ``ego`` carries the local goal (the selected waypoint) in ``gx, gy``;
    ``others`` is a (K, 5) array ``[px, py, vx, vy, radius]`` sorted by
    distance, limited to agents within sensor range.
    """

    ego: AgentState
    others: np.ndarray


Policy = Callable[[PolicyInput], Command]


def assemble_input(ego: AgentState, local_goal, peds: np.ndarray, vel: np.ndarray, r_max: float) -> PolicyInput:
    g = AgentState(ego.px, ego.py, ego.vx, ego.vy, ego.radius, float(local_goal[0]), float(local_goal[1]),
                   ego.v_pref, ego.heading)
    if len(peds) == 0:
        return PolicyInput(g, np.zeros((0, 5)))
    d = np.hypot(peds[:, 0] - ego.px, peds[:, 1] - ego.py)
    keep = np.flatnonzero(d <= r_max)
    keep = keep[np.argsort(d[keep], kind="stable")]
    others = np.column_stack([peds[keep, 0], peds[keep, 1], vel[keep, 0], vel[keep, 1], peds[keep, 2]])
    return PolicyInput(g, others)


def run_episode(
    grid: OccupancyGrid,
    peds: PedParams | Sequence[tuple[AgentState, PedPolicy]] | None,
    policy: Policy,
    start: Pose2D,
    goal: Pose2D,
    config: EpisodeConfig = EpisodeConfig(),
    planner_config: PlannerConfig | None = None,
    plan: GlobalPlan | None = None,
    seeds: dict | None = None,
) -> EpisodeResult:
    """Scan, pick a waypoint, query the policy and step until goal, time-out or terminal contact.

    ``peds`` may be spawn parameters (start and goal discs are kept clear)
    or ready-made pedestrians, which are deep-copied so the caller's
    policies keep their state.
    """
    config.validate()
    if isinstance(peds, PedParams):
        keep = [((start.x, start.y), config.r_robot + 0.3), ((goal.x, goal.y), config.r_robot + 0.3)]
        pedestrians = spawn_pedestrians(grid, peds, keep_out=keep)
    else:
        pedestrians = copy.deepcopy(list(peds or []))
    heading = config.start_heading
    if heading is None:
        heading = math.atan2(goal.y - start.y, goal.x - start.x)
    ego = AgentState(start.x, start.y, 0.0, 0.0, config.r_robot, goal.x, goal.y, config.v_pref, heading)
    world = WorldState(grid, ego, pedestrians, config.dt)
    meta = dict(seeds or {})
    trace = [] if config.record_trace else None

    def finish(success, scores, g_tr, d_tr):
        return EpisodeResult(
            success=success,
            duration=world.time,
            collisions=count_collision_events(g_tr, d_tr, config.wall_threshold, config.ped_threshold),
            perf_trace=scores,
            mean_perf=episode_perf(scores),
            total_perf=episode_return(scores),
            seeds=meta,
            trace=trace,
        )

    if math.hypot(goal.x - start.x, goal.y - start.y) <= config.goal_radius:
        return finish(True, [perf_step(PerfInputs(True, 0.0))], [], [])

    planner = None
    if config.use_planner:
        planner = WaypointPlanner(grid, start, goal, config.r_robot, planner_config, plan)
    tracker = VelocityTracker(world.ped_discs()[:, :2]) if pedestrians else None
    vel = np.zeros((len(pedestrians), 2))
    max_steps = int(round(config.time_limit / config.dt))
    scores: list[float] = []
    g_tr: list[float] = []
    d_tr: list[float] = []
    success = False
    for _ in range(max_steps):
        scan = raycast_scan(world, config.n_beams, config.r_max)
        if planner is not None:
            wp, dbg = planner.waypoint(scan, world.ego.pose)
        else:
            wp, dbg = (goal.x, goal.y), None
        inp = assemble_input(world.ego, wp, world.ped_discs(), vel, config.r_max)
        cmd = policy(inp)
        step_world(world, cmd, config.slide)
        if tracker is not None:
            vel = tracker.update(world.ped_discs()[:, :2], config.dt)
        e = world.ego
        at_goal = math.hypot(goal.x - e.px, goal.y - e.py) <= config.goal_radius
        g = static_clearance(world)
        d = dynamic_clearance(world)
        s = perf_step(PerfInputs(at_goal, g, d))
        scores.append(s)
        g_tr.append(g)
        d_tr.append(d)
        if trace is not None:
            rec = {"t": world.time, "x": e.px, "y": e.py, "heading": e.heading, "perf": s, "waypoint": list(wp)}
            if dbg is not None:
                rec["planner"] = dbg
            rec["peds"] = [[p.px, p.py] for p, _ in world.pedestrians]
            trace.append(rec)
        if at_goal:
            success = True
            break
        if config.terminal_wall and world.wall_contact:
            break
    return finish(success, scores, g_tr, d_tr)


def episode_seeds(master: int, index: int) -> dict:
    """Seeds for one episode: pedestrians and start/goal jitter come from separate substreams."""
    return {
        "master": master,
        "episode": index,
        "peds": seeding.derive_seed(master, "episode.peds", index),
        "jitter": seeding.derive_seed(master, "episode.jitter", index),
    }


def write_records(path, results: Sequence[EpisodeResult]) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps(r.record(), sort_keys=True) + "\n")


def read_records(path) -> list[dict]:
    """Parse a JSON-lines record file, skipping a truncated final line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    for i, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            if i == len(lines):
                break
            raise ValueError(f"{path}:{i}: malformed record ({exc.msg})") from None
    return out
