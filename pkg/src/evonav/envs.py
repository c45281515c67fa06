"""The seven environment variables, their level axes, and episode sampling from a configuration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import seeding
from .errors import PackingFailure, SpawnFailure
from .mapgen import CONVEXITY_LEVELS, MapParams, free_components, generate_map, open_arena
from .navplan import GlobalPlan, inflate
from .pedsim import PedParams, spawn_pedestrians
from .worldmodel import DEFAULT_R_ROBOT, OccupancyGrid, Pose2D

VARIABLES = ("room_number", "room_size", "corridor_width", "convexity", "ped_count", "ped_speed", "ped_policy")

# physical value at level 0 (easiest) and level 1 (hardest)
EASY_HARD = {
    "room_number": (0, 4),
    "room_size": (1.0, 0.5),
    "corridor_width": (1.0, 0.5),
    "convexity": (0.0, 1.0),  # position along CONVEXITY_LEVELS in listed order
    "ped_count": (10, 18),
    "ped_speed": (1.0, 2.0),
    "ped_policy": (0.0, 0.8),
}

# advisory physical range (min, max)
RANGES = {k: (min(a, b), max(a, b)) for k, (a, b) in EASY_HARD.items()}
RANGES["convexity"] = (1.0, math.inf)


def value_at(name: str, level: float):
    """Physical value for a difficulty ``level`` in [0, 1] (0 = easiest)."""
    if name not in EASY_HARD:
        raise KeyError(name)
    level = min(max(float(level), 0.0), 1.0)
    if name == "convexity":
        return CONVEXITY_LEVELS[int(round(level * (len(CONVEXITY_LEVELS) - 1)))]
    a, b = EASY_HARD[name]
    v = a + level * (b - a)
    if name in ("room_number", "ped_count"):
        return int(round(v))
    return v


@dataclass(frozen=True)
class EnvConfig:
    room_number: int = 0
    room_size: float = 1.0
    corridor_width: float = 1.0
    convexity: float = 1
    ped_count: int = 10
    ped_speed: float = 1.0
    ped_policy: float = 0.0

    @classmethod
    def from_levels(cls, levels: dict) -> "EnvConfig":
        return cls(**{k: value_at(k, levels.get(k, 0.0)) for k in VARIABLES})

    def map_params(self, seed: int) -> MapParams | None:
        if self.room_number == 0:
            return None
        return MapParams(room_number=self.room_number, room_size=self.room_size,
                         corridor_width=self.corridor_width, convexity=self.convexity, seed=seed)

    def ped_params(self, seed: int) -> PedParams:
        return PedParams(self.ped_count, self.ped_speed, self.ped_policy, seed)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in VARIABLES}
        if math.isinf(d["convexity"]):
            d["convexity"] = "inf"
        return d


@lru_cache(maxsize=256)
def build_map(cfg: EnvConfig, seed: int) -> OccupancyGrid:
    mp = cfg.map_params(seed)
    if mp is None:
        return open_arena()[0]
    for attempt in range(8):
        try:
            return generate_map(replace(mp, seed=seeding.derive_seed(seed, "envs.map", attempt)))[0]
        except PackingFailure:
            continue
    return generate_map(mp)[0]


@dataclass(frozen=True)
class Episode:
    grid: OccupancyGrid
    start: Pose2D
    goal: Pose2D
    peds: PedParams
    plan: GlobalPlan | None = None
    meta: dict = field(default_factory=dict)


def _reachable_cells(grid: OccupancyGrid, r_robot: float) -> np.ndarray:
    cache = grid.__dict__.setdefault("_reach", {})
    if r_robot not in cache:
        ok = ~inflate(grid, r_robot + 0.1)
        lab, n = free_components(ok)
        if n == 0:
            cache[r_robot] = np.zeros((0, 2), dtype=int)
        else:
            sizes = np.bincount(lab.ravel())[1:]
            cache[r_robot] = np.argwhere(lab == 1 + int(np.argmax(sizes)))
    return cache[r_robot]


def sample_start_goal(grid: OccupancyGrid, rng: np.random.Generator, dist_range=(3.0, 8.0),
                      r_robot: float = DEFAULT_R_ROBOT, tries: int = 200) -> tuple[Pose2D, Pose2D]:
    """Start and goal in the largest free component of the inflated grid, with
    straight-line separation inside ``dist_range`` (best effort after ``tries`` draws)."""
    cells = _reachable_cells(grid, r_robot)
    best = None
    for _ in range(tries):
        a, b = cells[rng.integers(len(cells))], cells[rng.integers(len(cells))]
        pa, pb = grid.cell_center(a[1], a[0]), grid.cell_center(b[1], b[0])
        d = math.dist(pa, pb)
        if dist_range[0] <= d <= dist_range[1]:
            best = (pa, pb)
            break
    if best is None:
        best = (pa, pb)
    (sx, sy), (gx, gy) = best
    return Pose2D(sx, sy, math.atan2(gy - sy, gx - sx)), Pose2D(gx, gy)


def sample_episode(cfg: EnvConfig, master: int, index: int, maps: int | None = None,
                   dist_range=(3.0, 8.0), r_robot: float = DEFAULT_R_ROBOT) -> Episode:
    """Episode ``index`` of configuration ``cfg``; with ``maps`` the episodes cycle over that many map seeds."""
    map_index = index if maps is None else index % maps
    grid = build_map(cfg, seeding.derive_seed(master, "envs.map_seed", map_index))
    rng = seeding.rng(master, "envs.start_goal", index)
    start, goal = sample_start_goal(grid, rng, dist_range, r_robot)
    peds = fit_crowd(grid, cfg.ped_params(seeding.derive_seed(master, "envs.peds", index)), start, goal, r_robot)
    meta = {"map_index": map_index, "episode": index, "ped_count": peds.count}
    return Episode(grid, start, goal, peds, None, meta)


def fit_crowd(grid: OccupancyGrid, peds: PedParams, start: Pose2D, goal: Pose2D,
              r_robot: float = DEFAULT_R_ROBOT) -> PedParams:
    """``peds`` with the count lowered until the crowd fits on the map.

    Small rooms joined by narrow corridors cannot always hold the largest
    crowds once the start and goal are kept clear.
    """
    keep = [((start.x, start.y), r_robot + 0.3), ((goal.x, goal.y), r_robot + 0.3)]
    while peds.count > 0:
        try:
            spawn_pedestrians(grid, peds, keep_out=keep)
            return peds
        except SpawnFailure:
            peds = replace(peds, count=peds.count - 1)
    return peds
