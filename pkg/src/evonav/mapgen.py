"""Procedural room/corridor maps driven by the four map-structure variables.

Rooms are rejection-sampled, non-overlapping rectangles separated by at
least one corridor width. Corridors join room centres along a spanning
tree (each room attaches to the nearest room already in the tree, in a
random order) plus ``room_number // 4`` extra random links. Convexity ``k``
caps the number of 90 degree bends per corridor at ``ceil(8 / k)``, so
``k = 1`` gives staircase zigzags and ``k = inf`` gives straight or
L-shaped links.

All geometry is built on integer cell coordinates and converted to metres
only for the :class:`RoomGraph` record.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from . import seeding
from .errors import Disconnected, InvalidParams, PackingFailure
from .worldmodel import DEFAULT_RESOLUTION, OccupancyGrid, Pose2D

ROOM_DIM_RANGE = (2.0, 6.0)
CORRIDOR_WIDTH_RANGE = (0.8, 2.0)
CONVEXITY_LEVELS = (1, 2, 3, 4, math.inf)
MAX_PLACEMENT_RETRIES = 1000
BORDER_CELLS = 2


def parse_convexity(value) -> float:
    """Accept 1-4, ``inf``/``"inf"``/``"∞"`` and the tabulated spelling ``100``."""
    if isinstance(value, str):
        v = value.strip().lower()
        if v in ("inf", "infinity", "∞"):
            return math.inf
        value = float(v)
    value = float(value)
    if value == 100:
        return math.inf
    if value not in CONVEXITY_LEVELS:
        raise InvalidParams(f"convexity must be one of 1, 2, 3, 4, inf; got {value}")
    return math.inf if math.isinf(value) else float(int(value))


def max_bends(convexity: float) -> int:
    return 1 if math.isinf(convexity) else math.ceil(8 / convexity)


def corridor_width_m(corridor_width: float) -> float:
    lo, hi = CORRIDOR_WIDTH_RANGE
    return lo + corridor_width * (hi - lo)


def room_dim_m(room_size: float, u: float) -> float:
    # room_size sets the largest dimension; u in [0, 1) picks within [lo, max]
    lo, hi = ROOM_DIM_RANGE
    return lo + (hi - lo) * room_size * u


@dataclass(frozen=True)
class MapParams:
    room_number: int = 4
    room_size: float = 0.75
    corridor_width: float = 0.75
    convexity: float = 1
    world_extent: float = 20.0
    seed: int = 0
    resolution: float = DEFAULT_RESOLUTION

    def __post_init__(self):
        if isinstance(self.room_number, bool) or int(self.room_number) != self.room_number:
            raise InvalidParams("room_number must be an integer")
        object.__setattr__(self, "room_number", int(self.room_number))
        if self.room_number < 1:
            raise InvalidParams(f"room_number must be >= 1, got {self.room_number}")
        for name in ("room_size", "corridor_width"):
            v = float(getattr(self, name))
            if not 0.0 <= v <= 1.0:
                raise InvalidParams(f"{name} must lie in [0, 1], got {v}")
            object.__setattr__(self, name, v)
        object.__setattr__(self, "convexity", parse_convexity(self.convexity))
        if not self.world_extent > 0 or not self.resolution > 0:
            raise InvalidParams("world_extent and resolution must be positive")
        object.__setattr__(self, "seed", int(self.seed))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["convexity"] = "inf" if math.isinf(self.convexity) else int(self.convexity)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MapParams":
        return cls(**d)


@dataclass(frozen=True)
class Corridor:
    rooms: tuple[int, int]
    points: tuple[tuple[float, float], ...]
    width: float

    def bends(self) -> int:
        return max(len(self.points) - 2, 0)


@dataclass
class RoomGraph:
    rooms: list[tuple[float, float, float, float]] = field(default_factory=list)
    corridors: list[Corridor] = field(default_factory=list)
    adjacency: list[tuple[int, int]] = field(default_factory=list)

    def centers(self) -> list[tuple[float, float]]:
        return [((x0 + x1) / 2, (y0 + y1) / 2) for x0, y0, x1, y1 in self.rooms]

    def to_dict(self) -> dict:
        return {
            "rooms": [list(r) for r in self.rooms],
            "corridors": [
                {"rooms": list(c.rooms), "points": [list(p) for p in c.points], "width": c.width}
                for c in self.corridors
            ],
            "adjacency": [list(a) for a in self.adjacency],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoomGraph":
        return cls(
            rooms=[tuple(r) for r in d["rooms"]],
            corridors=[
                Corridor(tuple(c["rooms"]), tuple(tuple(p) for p in c["points"]), c["width"])
                for c in d["corridors"]
            ],
            adjacency=[tuple(a) for a in d["adjacency"]],
        )


# --- corridor routing ------------------------------------------------------

def _split(total: int, k: int, amp: int | None = None, flip: bool = False) -> list[int]:
    """Split ``total`` into ``k`` integer steps.

    With ``amp`` set, cancelling wiggles of at least ``amp`` cells are added
    whenever a plain split would leave a zero-length step.
    """
    sign = -1 if total < 0 else 1
    q, r = divmod(abs(total), k)
    base = [sign * (q + (1 if i < r else 0)) for i in range(k)]
    if amp is None or k == 1 or all(base):
        return base
    a = max(abs(b) for b in base) + amp
    wiggle = [0] * k
    pairs_end = k if k % 2 == 0 else k - 3
    for i in range(0, pairs_end, 2):
        wiggle[i], wiggle[i + 1] = a, -a
    if k % 2:
        wiggle[-3:] = [a, a, -2 * a]
    if flip:
        wiggle = [-w for w in wiggle]
    return [b + w for b, w in zip(base, wiggle)]


def _simplify(points: list[tuple[int, int]]) -> list[tuple[int, int]]:
    out = [points[0]]
    for p in points[1:]:
        if p == out[-1]:
            continue
        if len(out) >= 2:
            a, b = out[-2], out[-1]
            if (a[0] == b[0] == p[0]) or (a[1] == b[1] == p[1]):
                out[-1] = p
                continue
        out.append(p)
    return out


def route_corridor(a, b, bends: int, rng: np.random.Generator, lo: int, hi: int, amp: int):
    """Axis-aligned polyline from cell ``a`` to cell ``b`` with at most ``bends`` turns."""
    first = int(rng.integers(2))
    axes = (first, 1 - first)
    nseg = bends + 1
    counts = ((nseg + 1) // 2, nseg // 2)
    delta = (b[0] - a[0], b[1] - a[1])
    flip = bool(rng.integers(2))
    pts: list[tuple[int, int]] = []
    # wiggled staircase, its mirror image, then a plain staircase that always fits
    for wig, fl in ((amp, flip), (amp, not flip), (None, False)):
        pieces = [_split(delta[axes[j]], counts[j], wig, fl) if counts[j] else [] for j in (0, 1)]
        pts = [tuple(a)]
        for s in range(nseg):
            j = s % 2
            step = pieces[j][s // 2]
            x, y = pts[-1]
            pts.append((x + step, y) if axes[j] == 0 else (x, y + step))
        if all(lo <= x <= hi and lo <= y <= hi for x, y in pts):
            break
    return _simplify(pts)


def _carve_segment(free: np.ndarray, p, q, wc: int):
    n_y, n_x = free.shape
    lo_off = (wc - 1) // 2
    hi_off = wc - 1 - lo_off
    x0, x1 = sorted((p[0], q[0]))
    y0, y1 = sorted((p[1], q[1]))
    cx0, cx1 = max(x0 - lo_off, 1), min(x1 + hi_off, n_x - 2)
    cy0, cy1 = max(y0 - lo_off, 1), min(y1 + hi_off, n_y - 2)
    free[cy0:cy1 + 1, cx0:cx1 + 1] = True


# --- generation ------------------------------------------------------------

def _admissible(taken: np.ndarray, wc: int, hc: int, margin: int) -> np.ndarray:
    """Mask of lower-left corners where a wc x hc room keeps ``margin`` cells from ``taken``."""
    n = taken.shape[0]
    sat = np.zeros((n + 1, n + 1), dtype=np.int64)
    sat[1:, 1:] = taken.cumsum(0).cumsum(1)
    ok = np.zeros((n, n), dtype=bool)
    hi_x, hi_y = n - BORDER_CELLS - wc, n - BORDER_CELLS - hc
    if hi_x < BORDER_CELLS or hi_y < BORDER_CELLS:
        return ok
    y0 = np.arange(BORDER_CELLS, hi_y + 1)[:, None]
    x0 = np.arange(BORDER_CELLS, hi_x + 1)[None, :]
    ya, yb = np.clip(y0 - margin, 0, n), np.clip(y0 + hc + margin, 0, n)
    xa, xb = np.clip(x0 - margin, 0, n), np.clip(x0 + wc + margin, 0, n)
    count = sat[yb, xb] - sat[ya, xb] - sat[yb, xa] + sat[ya, xa]
    ok[BORDER_CELLS:hi_y + 1, BORDER_CELLS:hi_x + 1] = count == 0
    return ok


def _place_rooms(params: MapParams, n: int, margin: int):
    """Sequentially draw each room uniformly among its admissible corners.

    A room with no admissible corner restarts the layout; the total number
    of restarts is bounded by ``MAX_PLACEMENT_RETRIES``.
    """
    size_rng = seeding.rng(params.seed, "mapgen.sizes")
    place_rng = seeding.rng(params.seed, "mapgen.place")
    res = params.resolution
    dims = []
    for _ in range(params.room_number):
        u = size_rng.random(2)
        dims.append(tuple(max(1, int(round(room_dim_m(params.room_size, v) / res))) for v in u))
    for _ in range(MAX_PLACEMENT_RETRIES):
        taken = np.zeros((n, n), dtype=bool)
        rooms: list[tuple[int, int, int, int]] = []
        for wc, hc in dims:
            ok = np.flatnonzero(_admissible(taken, wc, hc, margin).ravel())
            if ok.size == 0:
                break
            y0, x0 = divmod(int(ok[place_rng.integers(ok.size)]), n)
            rooms.append((x0, y0, x0 + wc, y0 + hc))
            taken[y0:y0 + hc, x0:x0 + wc] = True
        else:
            return rooms
    raise PackingFailure(
        f"could not place {params.room_number} rooms after {MAX_PLACEMENT_RETRIES} layout retries"
    )


def _spanning_edges(centers: np.ndarray, rng: np.random.Generator) -> list[tuple[int, int]]:
    n = len(centers)
    order = rng.permutation(n)
    edges = []
    for k in range(1, n):
        node = order[k]
        prev = order[:k]
        d = np.hypot(*(centers[prev] - centers[node]).T)
        parent = int(prev[int(np.argmin(d))])
        edges.append(tuple(sorted((int(node), parent))))
    existing = set(edges)
    candidates = [(i, j) for i in range(n) for j in range(i + 1, n) if (i, j) not in existing]
    extra = min(n // 4, len(candidates))
    if extra:
        pick = rng.choice(len(candidates), size=extra, replace=False)
        edges.extend(candidates[int(i)] for i in sorted(pick))
    return edges


def generate_map(params: MapParams) -> tuple[OccupancyGrid, RoomGraph]:
    res = params.resolution
    n = int(round(params.world_extent / res))
    width = corridor_width_m(params.corridor_width)
    wc = int(math.ceil(width / res - 1e-9))
    rooms = _place_rooms(params, n, margin=wc)

    free = np.zeros((n, n), dtype=bool)
    for x0, y0, x1, y1 in rooms:
        free[y0:y1, x0:x1] = True

    centers = np.array([((x0 + x1) // 2, (y0 + y1) // 2) for x0, y0, x1, y1 in rooms])
    corr_rng = seeding.rng(params.seed, "mapgen.corridors")
    edges = _spanning_edges(centers.astype(float), corr_rng) if len(rooms) > 1 else []
    bends = max_bends(params.convexity)
    lo = 1 + (wc - 1) // 2
    hi = n - 2 - (wc - 1 - (wc - 1) // 2)
    graph = RoomGraph(
        rooms=[(x0 * res, y0 * res, x1 * res, y1 * res) for x0, y0, x1, y1 in rooms],
        adjacency=list(edges),
    )
    for i, j in edges:
        pts = route_corridor(tuple(centers[i]), tuple(centers[j]), bends, corr_rng, lo, hi, amp=wc)
        for p, q in zip(pts[:-1], pts[1:]):
            _carve_segment(free, p, q, wc)
        graph.corridors.append(
            Corridor((i, j), tuple(((x + 0.5) * res, (y + 0.5) * res) for x, y in pts), wc * res)
        )
    return OccupancyGrid(~free, res, (0.0, 0.0)), graph


def open_arena(world_extent: float = 20.0, resolution: float = DEFAULT_RESOLUTION):
    """An obstacle-free square world: one room filling the interior."""
    n = int(round(world_extent / resolution))
    occ = np.ones((n, n), dtype=bool)
    occ[1:-1, 1:-1] = False
    graph = RoomGraph(rooms=[(resolution, resolution, (n - 1) * resolution, (n - 1) * resolution)])
    return OccupancyGrid(occ, resolution, (0.0, 0.0)), graph


# --- path queries ----------------------------------------------------------

def free_components(free: np.ndarray) -> tuple[np.ndarray, int]:
    """4-connected labelling of free cells."""
    return ndimage.label(free)


def grid_graph(free: np.ndarray) -> tuple[csr_matrix, np.ndarray]:
    """4-connected unit-weight graph over free cells; returns (graph, flat index -> node id)."""
    h, w = free.shape
    node = -np.ones(h * w, dtype=np.int64)
    flat = np.flatnonzero(free.ravel())
    node[flat] = np.arange(flat.size)
    rows, cols = [], []
    f = free
    right = f[:, :-1] & f[:, 1:]
    up = f[:-1, :] & f[1:, :]
    iy, ix = np.nonzero(right)
    rows.append(node[iy * w + ix]); cols.append(node[iy * w + ix + 1])
    iy, ix = np.nonzero(up)
    rows.append(node[iy * w + ix]); cols.append(node[(iy + 1) * w + ix])
    r = np.concatenate(rows); c = np.concatenate(cols)
    data = np.ones(2 * r.size)
    g = csr_matrix((data, (np.concatenate([r, c]), np.concatenate([c, r]))), shape=(flat.size, flat.size))
    return g, node


def _cell_pose(grid: OccupancyGrid, flat_index: int) -> Pose2D:
    iy, ix = divmod(int(flat_index), grid.width_cells)
    return Pose2D(*grid.cell_center(ix, iy))


def longest_path(grid: OccupancyGrid, graph: RoomGraph) -> tuple[Pose2D, Pose2D]:
    """Room-centre pair with the largest 4-connected BFS distance.

    A single-room map returns the two free cells of that room farthest apart.
    """
    w = grid.width_cells
    free = grid.free
    centers = [grid.world_to_cell(x, y) for x, y in graph.centers()]
    for ix, iy in centers:
        if not free[iy, ix]:
            raise Disconnected(f"room centre cell ({ix}, {iy}) is not free")
    g, node = grid_graph(free)
    if len(centers) >= 2:
        src = [node[iy * w + ix] for ix, iy in centers]
        dist = shortest_path(g, unweighted=True, indices=src)[:, src]
        if not np.all(np.isfinite(dist)):
            raise Disconnected("some room centres are mutually unreachable")
        i, j = np.unravel_index(int(np.argmax(dist)), dist.shape)
        i, j = min(i, j), max(i, j)
        return _cell_pose(grid, centers[i][1] * w + centers[i][0]), _cell_pose(grid, centers[j][1] * w + centers[j][0])

    labels, _ = free_components(free)
    ix, iy = centers[0]
    comp = labels == labels[iy, ix]
    interior = ndimage.binary_erosion(comp, structure=ndimage.generate_binary_structure(2, 1), border_value=0)
    boundary = np.flatnonzero((comp & ~interior).ravel())
    comp_flat = np.flatnonzero(comp.ravel())
    dist = shortest_path(g, unweighted=True, indices=node[boundary])[:, node[comp_flat]]
    a, b = np.unravel_index(int(np.argmax(dist)), dist.shape)
    p, q = sorted((int(boundary[a]), int(comp_flat[b])))
    return _cell_pose(grid, p), _cell_pose(grid, q)
