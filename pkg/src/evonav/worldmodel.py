"""Geometric and kinematic domain types plus primitive spatial queries.

Cell ``(ix, iy)`` of an :class:`OccupancyGrid` covers the square
``[ox + ix*res, ox + (ix+1)*res) x [oy + iy*res, oy + (iy+1)*res)`` and is
stored at ``occupied[iy, ix]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numba
import numpy as np
from scipy import ndimage

DEFAULT_RESOLUTION = 0.1
DEFAULT_R_MAX = 5.0
DEFAULT_R_ROBOT = 0.2


def normalize_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    a = math.remainder(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    return a


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    occupied: np.ndarray
    resolution: float = DEFAULT_RESOLUTION
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        occ = np.array(self.occupied, dtype=bool, copy=True)
        if occ.ndim != 2 or occ.shape[0] < 3 or occ.shape[1] < 3:
            raise ValueError(f"grid must be 2-D and at least 3x3, got {occ.shape}")
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        if not (occ[0].all() and occ[-1].all() and occ[:, 0].all() and occ[:, -1].all()):
            raise ValueError("outer boundary ring must be occupied")
        occ.flags.writeable = False
        object.__setattr__(self, "occupied", occ)
        object.__setattr__(self, "resolution", float(self.resolution))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def width_cells(self) -> int:
        return self.occupied.shape[1]

    @property
    def height_cells(self) -> int:
        return self.occupied.shape[0]

    @property
    def free(self) -> np.ndarray:
        return ~self.occupied

    @property
    def extent(self) -> tuple[float, float]:
        return self.width_cells * self.resolution, self.height_cells * self.resolution

    def world_to_cell(self, x: float, y: float) -> tuple[int, int]:
        return (
            int(math.floor((x - self.origin[0]) / self.resolution)),
            int(math.floor((y - self.origin[1]) / self.resolution)),
        )

    def cell_center(self, ix: int, iy: int) -> tuple[float, float]:
        return (
            self.origin[0] + (ix + 0.5) * self.resolution,
            self.origin[1] + (iy + 0.5) * self.resolution,
        )

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width_cells and 0 <= iy < self.height_cells

    @cached_property
    def center_edt(self) -> np.ndarray:
        # distance in cells from each cell centre to the nearest occupied cell centre
        return ndimage.distance_transform_edt(self.free)

    def same_as(self, other: "OccupancyGrid") -> bool:
        return (
            self.resolution == other.resolution
            and self.origin == other.origin
            and self.occupied.shape == other.occupied.shape
            and bool(np.array_equal(self.occupied, other.occupied))
        )


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "heading", normalize_angle(float(self.heading)))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class AgentState:
    """Observable ``[px, py, vx, vy, radius]`` plus hidden ``[gx, gy, v_pref, heading]``."""

    px: float
    py: float
    vx: float = 0.0
    vy: float = 0.0
    radius: float = DEFAULT_R_ROBOT
    gx: float = 0.0
    gy: float = 0.0
    v_pref: float = 1.0
    heading: float = 0.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if not self.v_pref > 0:
            raise ValueError("v_pref must be positive")

    @property
    def observable(self) -> np.ndarray:
        return np.array([self.px, self.py, self.vx, self.vy, self.radius])

    @property
    def hidden(self) -> np.ndarray:
        return np.array([self.gx, self.gy, self.v_pref, self.heading])

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.observable, self.hidden])

    @property
    def position(self) -> np.ndarray:
        return np.array([self.px, self.py])

    @property
    def pose(self) -> Pose2D:
        return Pose2D(self.px, self.py, self.heading)


@dataclass(frozen=True)
class Command:
    speed: float
    heading: float

    def clamped(self, v_pref: float) -> "Command":
        return Command(min(max(self.speed, 0.0), v_pref), self.heading)


@dataclass(frozen=True, eq=False)
class LaserScan:
    ranges: np.ndarray
    r_max: float
    frame_pose: Pose2D = field(default_factory=lambda: Pose2D(0.0, 0.0, 0.0))

    def __post_init__(self):
        r = np.array(self.ranges, dtype=float, copy=True)
        if r.ndim != 1 or r.size == 0:
            raise ValueError("ranges must be a non-empty 1-D array")
        if np.any(r <= 0) or np.any(r > self.r_max):
            raise ValueError("ranges must lie in (0, r_max]")
        r.flags.writeable = False
        object.__setattr__(self, "ranges", r)

    @property
    def n(self) -> int:
        return self.ranges.size

    def bearing(self, i) -> np.ndarray | float:
        return self.frame_pose.heading + 2.0 * np.pi * np.asarray(i) / self.n

    @cached_property
    def points(self) -> np.ndarray:
        """World-frame endpoints of every beam, shape (N, 2)."""
        b = self.bearing(np.arange(self.n))
        return np.column_stack(
            [self.frame_pose.x + self.ranges * np.cos(b), self.frame_pose.y + self.ranges * np.sin(b)]
        )

    def index_of_bearing(self, angle: float) -> int:
        rel = (angle - self.frame_pose.heading) % (2.0 * math.pi)
        return int(round(rel / (2.0 * math.pi) * self.n)) % self.n


def grid_is_free(grid: OccupancyGrid, p: Sequence[float]) -> bool:
    ix, iy = grid.world_to_cell(p[0], p[1])
    if not grid.in_bounds(ix, iy):
        return False
    return not grid.occupied[iy, ix]


@numba.njit(cache=True)
def _box_distance(occ, edt, res, ox, oy, x, y):
    h, w = occ.shape
    ix = int(math.floor((x - ox) / res))
    iy = int(math.floor((y - oy) / res))
    if ix < 0 or iy < 0 or ix >= w or iy >= h or occ[iy, ix]:
        return 0.0
    # the nearest box lies within the EDT centre distance plus half a diagonal
    half = int(math.ceil(edt[iy, ix] + 0.7072)) + 1
    best = math.inf
    for j in range(max(iy - half, 0), min(iy + half + 1, h)):
        by0 = oy + j * res
        dy = max(by0 - y, y - (by0 + res), 0.0)
        if dy >= best:
            continue
        for i in range(max(ix - half, 0), min(ix + half + 1, w)):
            if occ[j, i]:
                bx0 = ox + i * res
                dx = max(bx0 - x, x - (bx0 + res), 0.0)
                d = math.sqrt(dx * dx + dy * dy)
                if d < best:
                    best = d
    return best


def static_distance(grid: OccupancyGrid, x: float, y: float) -> float:
    """Euclidean distance from (x, y) to the nearest occupied cell rectangle (0 inside one)."""
    return _box_distance(grid.occupied, grid.center_edt, grid.resolution, grid.origin[0], grid.origin[1],
                         float(x), float(y))


def min_clearance(
    grid: OccupancyGrid,
    others: Sequence[AgentState],
    ego: AgentState,
    dynamic_only: bool = False,
) -> float:
    """Signed surface clearance of ``ego``; negative means penetration.

    Static obstacles are the occupied cell rectangles; another agent's
    surface sits at centre distance minus its radius. With ``dynamic_only``
    the grid is ignored and ``inf`` is returned when there are no agents.
    """
    best = math.inf
    if not dynamic_only:
        best = static_distance(grid, ego.px, ego.py)
    for o in others:
        best = min(best, math.hypot(o.px - ego.px, o.py - ego.py) - o.radius)
    return best - ego.radius


# --- grid file format -------------------------------------------------------

def write_grid(stem: str | Path, grid: OccupancyGrid, metadata: dict | None = None) -> tuple[Path, Path]:
    """Write ``<stem>.pgm`` (0 = occupied, 255 = free, top row = max y) and ``<stem>.json``."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    pgm, meta_path = stem.with_suffix(".pgm"), stem.with_suffix(".json")
    pixels = np.where(grid.occupied, 0, 255).astype(np.uint8)[::-1]
    header = f"P5\n{grid.width_cells} {grid.height_cells}\n255\n".encode("ascii")
    pgm.write_bytes(header + pixels.tobytes())
    meta = dict(metadata or {})
    meta.update(
        image=pgm.name,
        resolution=grid.resolution,
        origin=list(grid.origin),
        width_cells=grid.width_cells,
        height_cells=grid.height_cells,
    )
    meta_path.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return pgm, meta_path


def _read_pgm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise ValueError(f"{path}: expected an 8-bit binary PGM")
    w, h = int(tokens[1]), int(tokens[2])
    return np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(h, w)


def read_grid(stem: str | Path) -> tuple[OccupancyGrid, dict]:
    stem = Path(stem)
    meta_path = stem.with_suffix(".json")
    meta = json.loads(meta_path.read_text())
    pixels = _read_pgm(meta_path.parent / meta.get("image", stem.with_suffix(".pgm").name))
    grid = OccupancyGrid(pixels[::-1] < 128, meta["resolution"], tuple(meta["origin"]))
    return grid, meta
