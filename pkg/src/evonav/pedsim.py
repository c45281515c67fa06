"""Pedestrian spawning and the five open-loop motion policies.

Policies carry their own small amount of state (cycle direction, random
walk heading and timer, a private RNG), so stepping a policy is
deterministic given its construction seed. Pedestrians never avoid anyone;
walls are handled by :meth:`PedPolicy.on_wall_contact`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .errors import SpawnFailure
from .worldmodel import AgentState, Command, OccupancyGrid, grid_is_free, static_distance

SIMPLE_KINDS = ("Static", "Linear", "Cycle")
HARD_KINDS = ("CircleWalk", "RandomWalk")
RADIUS_RANGE = (0.2, 0.4)
CIRCLE_RADIUS_RANGE = (1.0, 3.0)
RESAMPLE_PERIOD_RANGE = (1.0, 3.0)
CYCLE_MIN_SEPARATION = 3.0
MAX_SPAWN_RETRIES = 1000


@dataclass(frozen=True)
class PedParams:
    count: int = 14
    mean_speed: float = 1.5
    hard_policy_fraction: float = 0.4
    seed: int = 0

    def hard_count(self) -> int:
        return int(math.floor(self.count * self.hard_policy_fraction + 0.5))


class PedPolicy:
    kind = "Static"
    hard = False

    def command(self, state: AgentState, dt: float) -> Command:
        return Command(0.0, state.heading)

    def on_wall_contact(self, state: AgentState, normal: tuple[float, float] = (0.0, 0.0)) -> None:
        pass

    def to_dict(self) -> dict:
        return {"kind": self.kind}


class StaticPolicy(PedPolicy):
    pass


@dataclass
class LinearPolicy(PedPolicy):
    velocity: tuple[float, float]
    kind = "Linear"

    def command(self, state, dt):
        vx, vy = self.velocity
        return Command(math.hypot(vx, vy), math.atan2(vy, vx))

    def on_wall_contact(self, state, normal=(0.0, 0.0)):
        vx, vy = self.velocity
        nx, ny = normal
        if nx == 0.0 and ny == 0.0:
            self.velocity = (-vx, -vy)
            return
        dot = vx * nx + vy * ny
        self.velocity = (vx - 2 * dot * nx, vy - 2 * dot * ny)

    def to_dict(self):
        return {"kind": self.kind, "velocity": list(self.velocity)}


@dataclass
class CyclePolicy(PedPolicy):
    endpoints: tuple[tuple[float, float], tuple[float, float]]
    speed: float
    target: int = 1
    kind = "Cycle"

    def command(self, state, dt):
        tx, ty = self.endpoints[self.target]
        d = math.hypot(tx - state.px, ty - state.py)
        if d <= state.radius:
            self.target = 1 - self.target
            tx, ty = self.endpoints[self.target]
            d = math.hypot(tx - state.px, ty - state.py)
        heading = math.atan2(ty - state.py, tx - state.px)
        return Command(min(self.speed, d / dt), heading)

    def on_wall_contact(self, state, normal=(0.0, 0.0)):
        self.target = 1 - self.target

    def to_dict(self):
        return {"kind": self.kind, "endpoints": [list(p) for p in self.endpoints], "speed": self.speed}


@dataclass
class CircleWalkPolicy(PedPolicy):
    center: tuple[float, float]
    radius: float
    speed: float
    direction: int = 1
    kind = "CircleWalk"
    hard = True

    @property
    def angular_rate(self) -> float:
        return self.direction * self.speed / self.radius

    def command(self, state, dt):
        cx, cy = self.center
        phase = math.atan2(state.py - cy, state.px - cx) + self.angular_rate * dt
        tx, ty = cx + self.radius * math.cos(phase), cy + self.radius * math.sin(phase)
        # chord to the next point on the circle keeps the walker on it exactly
        return Command(math.hypot(tx - state.px, ty - state.py) / dt, math.atan2(ty - state.py, tx - state.px))

    def on_wall_contact(self, state, normal=(0.0, 0.0)):
        self.direction = -self.direction

    def to_dict(self):
        return {"kind": self.kind, "center": list(self.center), "radius": self.radius,
                "speed": self.speed, "direction": self.direction}


@dataclass
class RandomWalkPolicy(PedPolicy):
    speed: float
    seed: int
    heading: float = 0.0
    timer: float = 0.0
    rng: np.random.Generator = field(init=False, repr=False)
    kind = "RandomWalk"
    hard = True

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)
        self._resample()

    def _resample(self):
        self.heading = float(self.rng.uniform(-math.pi, math.pi))
        self.timer = float(self.rng.uniform(*RESAMPLE_PERIOD_RANGE))

    def command(self, state, dt):
        if self.timer <= 0.0:
            self._resample()
        self.timer -= dt
        return Command(self.speed, self.heading)

    def on_wall_contact(self, state, normal=(0.0, 0.0)):
        self._resample()

    def to_dict(self):
        return {"kind": self.kind, "speed": self.speed, "seed": self.seed}


def policy_from_dict(d: dict) -> PedPolicy:
    kind = d["kind"]
    if kind == "Static":
        return StaticPolicy()
    if kind == "Linear":
        return LinearPolicy(tuple(d["velocity"]))
    if kind == "Cycle":
        return CyclePolicy(tuple(tuple(p) for p in d["endpoints"]), d["speed"])
    if kind == "CircleWalk":
        return CircleWalkPolicy(tuple(d["center"]), d["radius"], d["speed"], d.get("direction", 1))
    if kind == "RandomWalk":
        return RandomWalkPolicy(d["speed"], d["seed"])
    raise ValueError(f"unknown pedestrian policy kind {kind!r}")


def step_policy(policy: PedPolicy, state: AgentState, dt: float) -> Command:
    if not dt > 0:
        raise ValueError("dt must be positive")
    return policy.command(state, dt)


def assign_kinds(count: int, hard_fraction: float) -> list[str]:
    """Kinds for ``count`` pedestrians: hard kinds first, CircleWalk taking any odd one out."""
    n_hard = int(math.floor(count * hard_fraction + 0.5))
    n_hard = min(max(n_hard, 0), count)
    kinds = ["CircleWalk"] * ((n_hard + 1) // 2) + ["RandomWalk"] * (n_hard // 2)
    n_simple = count - n_hard
    for i, k in enumerate(SIMPLE_KINDS):
        kinds += [k] * (n_simple // 3 + (1 if i < n_simple % 3 else 0))
    return kinds


def sample_speed(kind: str, mean_speed: float, rng: np.random.Generator) -> float:
    if kind in HARD_KINDS:
        return float(rng.uniform(0.5 * mean_speed, 1.5 * mean_speed))
    return float(mean_speed)


def _visible(grid: OccupancyGrid, a, b, clearance: float) -> bool:
    """Conservative line-of-sight test: every sample along a-b keeps ``clearance`` from walls."""
    d = math.hypot(b[0] - a[0], b[1] - a[1])
    t = np.linspace(0.0, 1.0, max(2, int(math.ceil(d / (grid.resolution / 2))) + 1))
    xs, ys = a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])
    ix = np.floor((xs - grid.origin[0]) / grid.resolution).astype(int)
    iy = np.floor((ys - grid.origin[1]) / grid.resolution).astype(int)
    if ix.min() < 0 or iy.min() < 0 or ix.max() >= grid.width_cells or iy.max() >= grid.height_cells:
        return False
    # centre-to-centre EDT minus half a cell diagonal bounds the true box distance from below
    lower = (grid.center_edt[iy, ix] - 2 * 0.7072) * grid.resolution
    return bool(np.all(lower >= clearance))


def _sample_free_point(grid, rng, free_cells, radius):
    iy, ix = free_cells[int(rng.integers(len(free_cells)))]
    x, y = grid.cell_center(ix, iy)
    x += rng.uniform(-0.5, 0.5) * grid.resolution
    y += rng.uniform(-0.5, 0.5) * grid.resolution
    if static_distance(grid, x, y) < radius:
        return None
    return x, y


def spawn_pedestrians(
    grid: OccupancyGrid,
    params: PedParams,
    keep_out: list[tuple[tuple[float, float], float]] = (),
) -> list[tuple[AgentState, PedPolicy]]:
    """Spawn ``params.count`` pedestrians on free, mutually disjoint discs.

    ``keep_out`` lists (centre, radius) discs no pedestrian may overlap,
    e.g. the ego start and goal.
    """
    rng = seeding.rng(params.seed, "pedsim.spawn")
    kinds = assign_kinds(params.count, params.hard_policy_fraction)
    free_cells = np.argwhere(grid.free)
    if len(free_cells) == 0:
        raise SpawnFailure("grid has no free cells")
    placed: list[tuple[float, float, float]] = []
    out = []
    for idx, kind in enumerate(kinds):
        radius = float(rng.uniform(*RADIUS_RANGE))
        speed = sample_speed(kind, params.mean_speed, rng)
        for _ in range(MAX_SPAWN_RETRIES):
            p = _sample_free_point(grid, rng, free_cells, radius)
            if p is None:
                continue
            if any(math.hypot(p[0] - x, p[1] - y) < radius + r for x, y, r in placed):
                continue
            if any(math.hypot(p[0] - c[0], p[1] - c[1]) < radius + r for c, r in keep_out):
                continue
            break
        else:
            raise SpawnFailure(f"could not place pedestrian {idx} after {MAX_SPAWN_RETRIES} retries")
        placed.append((p[0], p[1], radius))
        policy = _make_policy(kind, p, radius, speed, grid, rng, free_cells, params.seed, idx)
        heading = float(rng.uniform(-math.pi, math.pi))
        state = AgentState(p[0], p[1], 0.0, 0.0, radius, p[0], p[1], max(speed, 1e-3), heading)
        out.append((state, policy))
    return out


def _make_policy(kind, p, radius, speed, grid, rng, free_cells, seed, idx) -> PedPolicy:
    if kind == "Static":
        return StaticPolicy()
    if kind == "Linear":
        a = float(rng.uniform(-math.pi, math.pi))
        return LinearPolicy((speed * math.cos(a), speed * math.sin(a)))
    if kind == "Cycle":
        best, best_d = p, 0.0
        for _ in range(200):
            q = _sample_free_point(grid, rng, free_cells, radius)
            if q is None:
                continue
            d = math.hypot(q[0] - p[0], q[1] - p[1])
            if d > best_d and _visible(grid, p, q, radius):
                best, best_d = q, d
                if d >= CYCLE_MIN_SEPARATION:
                    break
        return CyclePolicy((tuple(p), tuple(best)), speed)
    if kind == "CircleWalk":
        r = float(rng.uniform(*CIRCLE_RADIUS_RANGE))
        a = float(rng.uniform(-math.pi, math.pi))
        center = (p[0] - r * math.cos(a), p[1] - r * math.sin(a))
        direction = 1 if rng.integers(2) else -1
        return CircleWalkPolicy(center, r, speed, direction)
    if kind == "RandomWalk":
        return RandomWalkPolicy(speed, seeding.derive_seed(seed, "pedsim.randomwalk", idx))
    raise ValueError(kind)


def advance_pedestrian(grid: OccupancyGrid, state: AgentState, policy: PedPolicy, dt: float) -> AgentState:
    """One Euler step; a move that would put the walker's centre in a wall is refused."""
    cmd = step_policy(policy, state, dt)
    vx, vy = cmd.speed * math.cos(cmd.heading), cmd.speed * math.sin(cmd.heading)
    nx, ny = state.px + vx * dt, state.py + vy * dt
    if cmd.speed > 0 and not grid_is_free(grid, (nx, ny)):
        bx = not grid_is_free(grid, (nx, state.py))
        by = not grid_is_free(grid, (state.px, ny))
        if bx == by:
            normal = (0.0, 0.0)
        else:
            normal = (1.0, 0.0) if bx else (0.0, 1.0)
        policy.on_wall_contact(state, normal)
        return AgentState(state.px, state.py, 0.0, 0.0, state.radius, state.gx, state.gy, state.v_pref, state.heading)
    heading = cmd.heading if cmd.speed > 0 else state.heading
    return AgentState(nx, ny, vx, vy, state.radius, state.gx, state.gy, state.v_pref, heading)
