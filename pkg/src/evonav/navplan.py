"""Hierarchical planning: grid A* global planner and the gap-based waypoint planner.

Bearing index ``i`` of a scan points at ``heading + 2*pi*i/N``; a gap runs
counter-clockwise from its right edge to its left edge.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numba
import numpy as np
from scipy import ndimage

from .errors import EmptyPlan, NoCandidates, NoPath
from .worldmodel import DEFAULT_R_ROBOT, LaserScan, OccupancyGrid, Pose2D

SQRT2 = math.sqrt(2.0)
TWO_PI = 2.0 * math.pi


# --- global planner ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GlobalPlan:
    cells: tuple[tuple[int, int], ...]
    points: np.ndarray
    length: float

    @property
    def poses(self) -> list[Pose2D]:
        return [Pose2D(float(x), float(y)) for x, y in self.points]

    def __len__(self):
        return len(self.cells)


def inflation_footprint(radius: float, resolution: float) -> np.ndarray:
    """Cells whose rectangle lies closer than ``radius`` to the centre of the middle cell."""
    k = int(math.ceil(radius / resolution)) + 1
    d = np.arange(-k, k + 1)
    dx = np.maximum(np.abs(d)[None, :] - 0.5, 0.0)
    dy = np.maximum(np.abs(d)[:, None] - 0.5, 0.0)
    return np.hypot(dx, dy) * resolution < radius


def inflate(grid: OccupancyGrid, radius: float) -> np.ndarray:
    """Occupied cells dilated so that free cells keep ``radius`` clearance at their centre."""
    cache = grid.__dict__.setdefault("_inflated", {})
    key = round(radius, 9)
    if key not in cache:
        blocked = ndimage.binary_dilation(grid.occupied, structure=inflation_footprint(radius, grid.resolution))
        blocked |= grid.occupied
        blocked.flags.writeable = False
        cache[key] = blocked
    return cache[key]


def nearest_unblocked(blocked: np.ndarray, ix: int, iy: int) -> tuple[int, int]:
    if not blocked[iy, ix]:
        return ix, iy
    _, (ry, rx) = ndimage.distance_transform_edt(blocked, return_indices=True)
    return int(rx[iy, ix]), int(ry[iy, ix])


def astar(blocked: np.ndarray, start: tuple[int, int], goal: tuple[int, int]) -> tuple[list[tuple[int, int]], float]:
    """8-connected A* in cell units; diagonals may not cut blocked corners.

    Ties in the open list break on (f, h, flat cell index).
    """
    h_cells, w_cells = blocked.shape
    blk = blocked.ravel().tolist()
    s = start[1] * w_cells + start[0]
    g_idx = goal[1] * w_cells + goal[0]
    gx, gy = goal

    def heur(i):
        dx = abs(i % w_cells - gx)
        dy = abs(i // w_cells - gy)
        return (dx + dy) + (SQRT2 - 2.0) * min(dx, dy)

    g = {s: 0.0}
    parent = {s: -1}
    closed = set()
    h0 = heur(s)
    heap = [(h0, h0, s)]
    moves = ((1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
             (1, 1, SQRT2), (1, -1, SQRT2), (-1, 1, SQRT2), (-1, -1, SQRT2))
    while heap:
        f, h, cur = heapq.heappop(heap)
        if cur in closed:
            continue
        if cur == g_idx:
            break
        closed.add(cur)
        cx, cy = cur % w_cells, cur // w_cells
        gc = g[cur]
        for dx, dy, cost in moves:
            nx, ny = cx + dx, cy + dy
            if nx < 0 or ny < 0 or nx >= w_cells or ny >= h_cells:
                continue
            nb = ny * w_cells + nx
            if blk[nb] or nb in closed:
                continue
            if dx and dy and (blk[cy * w_cells + nx] or blk[ny * w_cells + cx]):
                continue
            ng = gc + cost
            if ng < g.get(nb, math.inf):
                g[nb] = ng
                parent[nb] = cur
                hn = heur(nb)
                heapq.heappush(heap, (ng + hn, hn, nb))
    else:
        raise NoPath(f"no path from cell {start} to cell {goal}")
    path = []
    cur = g_idx
    while cur != -1:
        path.append((cur % w_cells, cur // w_cells))
        cur = parent[cur]
    return path[::-1], g[g_idx]


def plan_global(
    grid: OccupancyGrid,
    start: Pose2D,
    goal: Pose2D,
    inflation: float = 0.1,
    r_robot: float = DEFAULT_R_ROBOT,
    snap: bool = False,
) -> GlobalPlan:
    """Shortest 8-connected path on the grid inflated by ``r_robot + inflation``.

    The returned points are cell centres, from the start cell to the goal
    cell. With ``snap`` a blocked start or goal is moved to the nearest
    unblocked cell instead of raising :class:`NoPath`.
    """
    blocked = inflate(grid, r_robot + inflation)
    cells = []
    for p in (start, goal):
        ix, iy = grid.world_to_cell(p.x, p.y)
        if not grid.in_bounds(ix, iy):
            raise NoPath(f"{p} lies outside the grid")
        if blocked[iy, ix]:
            if not snap:
                raise NoPath(f"{p} is blocked on the inflated grid")
            ix, iy = nearest_unblocked(blocked, ix, iy)
        cells.append((ix, iy))
    path, cost = astar(blocked, cells[0], cells[1])
    pts = np.array([grid.cell_center(ix, iy) for ix, iy in path])
    return GlobalPlan(tuple(path), pts, cost * grid.resolution)


def nearest_plan_index(plan: GlobalPlan, ego: Pose2D, start_index: int = 0) -> int:
    if len(plan) == 0:
        raise EmptyPlan("plan has no poses")
    pts = plan.points[start_index:]
    d = np.hypot(pts[:, 0] - ego.x, pts[:, 1] - ego.y)
    return start_index + int(np.argmin(d))


def extract_plan_goal(
    plan: GlobalPlan,
    ego: Pose2D,
    horizon: float,
    visible: Callable[[np.ndarray], np.ndarray] | None = None,
    start_index: int = 0,
) -> Pose2D:
    """Furthest plan pose, walking forward from the one nearest ``ego``, still within ``horizon``.

    ``visible`` optionally maps an (M, 2) array of candidate points to a
    boolean mask; the furthest visible candidate wins, falling back to the
    nearest pose when none is visible.
    """
    i0 = nearest_plan_index(plan, ego, start_index)
    pts = plan.points[i0:]
    inside = np.hypot(pts[:, 0] - ego.x, pts[:, 1] - ego.y) <= horizon
    outside = np.flatnonzero(~inside)
    end = int(outside[0]) if outside.size else len(pts)
    end = max(end, 1)
    cand = pts[:end]
    idx = end - 1
    if visible is not None:
        if hasattr(visible, "furthest"):
            idx = max(visible.furthest(cand), 0)
        else:
            ok = np.flatnonzero(visible(cand))
            idx = int(ok[-1]) if ok.size else 0
    x, y = cand[idx]
    return Pose2D(float(x), float(y))


# --- gaps ----------------------------------------------------------------------

@dataclass(frozen=True)
class Gap:
    right_index: int
    left_index: int
    right_point: tuple[float, float]
    left_point: tuple[float, float]
    kind: str  # "swept" | "radial"
    full_circle: bool = False

    @property
    def chord(self) -> float:
        return math.dist(self.right_point, self.left_point)

    def key(self):
        return (self.kind, self.right_index, self.left_index)


def _pt(scan: LaserScan, i: int) -> tuple[float, float]:
    pts = scan.__dict__.get("_point_list")
    if pts is None:
        pts = scan.__dict__["_point_list"] = [tuple(p) for p in scan.points.tolist()]
    return pts[i]


def detect_gaps(scan: LaserScan, r_robot: float = DEFAULT_R_ROBOT) -> list[Gap]:
    """Raw gaps: maximal runs of max-range beams with a passable chord (swept)
    and adjacent beams whose ranges jump by more than the robot diameter (radial)."""
    L = scan.ranges
    n = scan.n
    is_max = L == scan.r_max
    if is_max.all():
        return [Gap(0, n - 1, _pt(scan, 0), _pt(scan, n - 1), "swept", full_circle=True)]
    gaps = []
    diam = 2.0 * r_robot
    if is_max.any():
        s0 = int(np.flatnonzero(~is_max)[0])
        i = 1
        while i <= n:
            j = (s0 + i) % n
            if is_max[j]:
                k = 0
                while is_max[(j + k + 1) % n]:
                    k += 1
                right, left = j, (j + k) % n
                if math.dist(_pt(scan, right), _pt(scan, left)) > diam:
                    gaps.append(Gap(right, left, _pt(scan, right), _pt(scan, left), "swept"))
                i += k + 1
            else:
                i += 1
    jump = np.abs(np.roll(L, -1) - L) > diam
    for i in np.flatnonzero(jump):
        i = int(i)
        j = (i + 1) % n
        gaps.append(Gap(i, j, _pt(scan, i), _pt(scan, j), "radial"))
    gaps.sort(key=lambda g: (g.right_index, g.kind))
    return gaps


def _cyclic_range(a: int, b: int, n: int) -> np.ndarray:
    """Indices a, a+1, ..., b (mod n)."""
    return (a + np.arange((b - a) % n + 1)) % n


def simplify_gaps(raw: Sequence[Gap], scan: LaserScan, r_robot: float = DEFAULT_R_ROBOT) -> list[Gap]:
    """Merge an opening radial gap with the next closing one into a swept gap.

    The pair merges when the chord between the two outer (near) edge points
    is passable and no beam between them returns closer than the nearer of
    those two edges.
    """
    L = scan.ranges
    n = scan.n
    radial = [g for g in raw if g.kind == "radial"]
    if len(radial) < 2:
        return list(raw)
    used: set[int] = set()
    merged = []
    m = len(radial)
    for a in range(m):
        b = (a + 1) % m
        if a in used or b in used or a == b:
            continue
        g1, g2 = radial[a], radial[b]
        opening = L[g1.left_index] > L[g1.right_index]
        closing = L[g2.left_index] < L[g2.right_index]
        if not (opening and closing):
            continue
        outer_r, outer_l = g1.right_index, g2.left_index
        between = _cyclic_range(g1.left_index, g2.right_index, n)
        if between.size >= n:
            continue
        floor = min(L[outer_r], L[outer_l])
        if np.any(L[between] < floor):
            continue
        if math.dist(_pt(scan, outer_r), _pt(scan, outer_l)) <= 2.0 * r_robot:
            continue
        used.update((a, b))
        merged.append(Gap(outer_r, outer_l, _pt(scan, outer_r), _pt(scan, outer_l), "swept"))
    consumed = {radial[i].key() for i in used}
    out = [g for g in raw if g.key() not in consumed] + merged
    out.sort(key=lambda g: (g.right_index, g.kind))
    return out


def _bearing(origin: Pose2D, p) -> float:
    return math.atan2(p[1] - origin.y, p[0] - origin.x)


_PIVOT_STEPS = np.radians(np.arange(5, 95, 5))


def _pivot_radial(gap: Gap, scan: LaserScan, r_robot: float) -> Gap:
    """Swing the near edge about the far edge, in 5 degree steps up to 90, until it is visible."""
    pose = scan.frame_pose
    L = scan.ranges
    near_is_right = L[gap.right_index] < L[gap.left_index]
    near, far = (gap.right_point, gap.left_point) if near_is_right else (gap.left_point, gap.right_point)
    vx, vy = near[0] - far[0], near[1] - far[1]
    far_bearing = _bearing(pose, far)
    # turn toward the far beam: the side where a small rotation brings the bearing closer
    c5, s5 = math.cos(_PIVOT_STEPS[0]), math.sin(_PIVOT_STEPS[0])
    probe = (far[0] + c5 * vx - s5 * vy, far[1] + s5 * vx + c5 * vy)
    d_probe = abs(math.remainder(_bearing(pose, probe) - far_bearing, TWO_PI))
    d_near = abs(math.remainder(_bearing(pose, near) - far_bearing, TWO_PI))
    a = _PIVOT_STEPS if d_probe < d_near else -_PIVOT_STEPS
    c, s = np.cos(a), np.sin(a)
    px = far[0] + c * vx - s * vy
    py = far[1] + s * vx + c * vy
    dx, dy = px - pose.x, py - pose.y
    d = np.hypot(dx, dy)
    idx = np.round(((np.arctan2(dy, dx) - pose.heading) % TWO_PI) / TWO_PI * scan.n).astype(int) % scan.n
    ok = np.flatnonzero(L[idx] >= np.minimum(d + r_robot, scan.r_max))
    k = int(ok[0]) if ok.size else len(a) - 1
    new_t = (float(px[k]), float(py[k]))
    if near_is_right:
        return replace(gap, right_point=new_t)
    return replace(gap, left_point=new_t)


def manipulate_gaps(simp: Sequence[Gap], scan: LaserScan, r_robot: float = DEFAULT_R_ROBOT) -> list[Gap]:
    """Pivot radial gaps for line of sight, then pull both edges inward by ``r_robot``.

    Gaps whose chord would not survive the inflation are dropped; a
    full-circle gap passes through untouched.
    """
    out = []
    for g in simp:
        if g.full_circle:
            out.append(g)
            continue
        if g.kind == "radial":
            g = _pivot_radial(g, scan, r_robot)
        c = g.chord
        if c - 2.0 * r_robot <= 0.0:
            continue
        r, l = np.array(g.right_point), np.array(g.left_point)
        u = (l - r) / c
        r2, l2 = r + r_robot * u, l - r_robot * u
        out.append(replace(g, right_point=(float(r2[0]), float(r2[1])), left_point=(float(l2[0]), float(l2[1]))))
    return out


# --- waypoints -------------------------------------------------------------------

@dataclass(frozen=True)
class GapWaypoint:
    position: tuple[float, float]
    gap: Gap | None
    bearing_index: int
    cost: float = math.nan


def _in_sector(theta: float, right: float, left: float) -> bool:
    return (theta - right) % TWO_PI <= (left - right) % TWO_PI


def _ray_chord_distance(origin, theta, a, b) -> float:
    """Distance along the ray from ``origin`` at ``theta`` to the line through a and b."""
    dx, dy = math.cos(theta), math.sin(theta)
    ex, ey = b[0] - a[0], b[1] - a[1]
    den = dx * ey - dy * ex
    if abs(den) < 1e-12:
        return math.inf
    wx, wy = a[0] - origin[0], a[1] - origin[1]
    return (wx * ey - wy * ex) / den


def _pull_into_view(scan: LaserScan, p, r_robot: float):
    pose = scan.frame_pose
    d = math.hypot(p[0] - pose.x, p[1] - pose.y)
    if d < 1e-9:
        return p
    th = math.atan2(p[1] - pose.y, p[0] - pose.x)
    rng = scan.ranges[scan.index_of_bearing(th)]
    if d < rng:
        return p
    d2 = max(rng - r_robot, 0.5 * rng)
    return (pose.x + d2 * math.cos(th), pose.y + d2 * math.sin(th))


def place_waypoints(
    gaps: Sequence[Gap],
    plan_goal: Pose2D,
    ego: Pose2D,
    scan: LaserScan,
    beta: float = 0.25,
    push: float = 0.5,
    r_robot: float = DEFAULT_R_ROBOT,
) -> list[GapWaypoint]:
    """One waypoint per gap.

    The first gap whose sector holds the plan goal in front of its chord gets
    the plan goal itself; every other waypoint sits a fraction ``beta`` along
    the chord from the edge on the plan goal's side, pushed ``push`` metres
    past the chord, and is pulled back into scanned free space if needed.
    """
    goal = (plan_goal.x, plan_goal.y)
    theta_g = _bearing(ego, goal)
    d_goal = math.hypot(goal[0] - ego.x, goal[1] - ego.y)
    claimed = False
    out = []
    for g in gaps:
        if g.full_circle:
            if not claimed:
                claimed = True
                out.append(GapWaypoint(goal, g, scan.index_of_bearing(theta_g)))
            continue
        th_r, th_l = _bearing(ego, g.right_point), _bearing(ego, g.left_point)
        inside = _in_sector(theta_g, th_r, th_l)
        if inside and not claimed and d_goal <= _ray_chord_distance((ego.x, ego.y), theta_g, g.right_point, g.left_point):
            claimed = True
            out.append(GapWaypoint(goal, g, scan.index_of_bearing(theta_g)))
            continue
        to_left = (theta_g - th_l) % TWO_PI
        to_right = (th_r - theta_g) % TWO_PI
        if inside:
            to_left, to_right = (th_l - theta_g) % TWO_PI, (theta_g - th_r) % TWO_PI
        near, other = (g.left_point, g.right_point) if to_left <= to_right else (g.right_point, g.left_point)
        ex, ey = other[0] - near[0], other[1] - near[1]
        px, py = near[0] + beta * ex, near[1] + beta * ey
        norm = max(math.hypot(ex, ey), 1e-12)
        nx, ny = -ey / norm, ex / norm
        if nx * (px - ego.x) + ny * (py - ego.y) < 0:
            nx, ny = -nx, -ny
        p = _pull_into_view(scan, (px + push * nx, py + push * ny), r_robot)
        out.append(GapWaypoint((float(p[0]), float(p[1])), g, scan.index_of_bearing(_bearing(ego, p))))
    return out


@numba.njit(cache=True)
def _min_dists(hx, hy, qx, qy):
    out = np.full(qx.shape[0], math.inf)
    for j in range(qx.shape[0]):
        best = math.inf
        for k in range(hx.shape[0]):
            d = (hx[k] - qx[j]) ** 2 + (hy[k] - qy[j]) ** 2
            if d < best:
                best = d
        out[j] = math.sqrt(best)
    return out


def scan_clearances(scan: LaserScan, points) -> np.ndarray:
    """Distance from each point to the nearest beam that returned an obstacle (inf if none)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    hits = scan.points[scan.ranges < scan.r_max]
    return _min_dists(np.ascontiguousarray(hits[:, 0]), np.ascontiguousarray(hits[:, 1]),
                      np.ascontiguousarray(pts[:, 0]), np.ascontiguousarray(pts[:, 1]))


def scan_clearance(scan: LaserScan, p) -> float:
    return float(scan_clearances(scan, [p])[0])


def waypoint_cost(w, plan_goal: Pose2D, scan: LaserScan, w_goal=1.0, w_obs=4.0, c_safe=0.5,
                  clearance: float | None = None) -> float:
    dist = math.hypot(w[0] - plan_goal.x, w[1] - plan_goal.y)
    if clearance is None:
        clearance = scan_clearance(scan, w)
    pen = max(0.0, c_safe - clearance)
    return w_goal * dist + w_obs * pen * pen


def select_waypoint(
    candidates: Sequence[GapWaypoint],
    plan_goal: Pose2D,
    scan: LaserScan,
    w_goal: float = 1.0,
    w_obs: float = 4.0,
    c_safe: float = 0.5,
) -> GapWaypoint:
    if not candidates:
        raise NoCandidates("no gap waypoints to choose from")
    clear = scan_clearances(scan, [c.position for c in candidates])
    costs = [waypoint_cost(c.position, plan_goal, scan, w_goal, w_obs, c_safe, float(cl))
             for c, cl in zip(candidates, clear)]
    best = min(range(len(candidates)), key=lambda i: (costs[i], candidates[i].bearing_index))
    return replace(candidates[best], cost=costs[best])


@numba.njit(cache=True)
def _visible_kernel(ox, oy, hx, hy, px, py, need, ranges, heading, r_max, furthest_only):
    n = ranges.shape[0]
    m = px.shape[0]
    out = np.zeros(m, dtype=np.bool_)
    for jj in range(m):
        j = m - 1 - jj
        dx = px[j] - ox
        dy = py[j] - oy
        L2 = dx * dx + dy * dy
        L = math.sqrt(L2)
        rel = (math.atan2(dy, dx) - heading) % (2.0 * math.pi)
        b = int(round(rel / (2.0 * math.pi) * n)) % n
        if ranges[b] < min(L, r_max):
            continue
        ok = True
        for k in range(hx.shape[0]):
            wx = hx[k] - ox
            wy = hy[k] - oy
            t = 0.0
            if L2 > 1e-12:
                t = min(max((wx * dx + wy * dy) / L2, 0.0), 1.0)
            ex = wx - t * dx
            ey = wy - t * dy
            if ex * ex + ey * ey < need * need:
                ok = False
                break
        if ok:
            out[j] = True
            if furthest_only:
                break
    return out


class segment_visibility:
    """Visibility test against one scan.

    A point is visible when the straight run to it keeps ``r_robot + margin``
    from every scan return and lies inside the scanned region. Calling the
    object gives a mask over an (M, 2) array of points; :meth:`furthest`
    returns the highest visible index (or -1) without testing the rest.
    """

    def __init__(self, scan: LaserScan, r_robot: float, margin: float = 0.05):
        pose = scan.frame_pose
        hits = scan.points[scan.ranges < scan.r_max]
        self._args = (pose.x, pose.y, np.ascontiguousarray(hits[:, 0]), np.ascontiguousarray(hits[:, 1]))
        self._rest = (r_robot + margin, scan.ranges, pose.heading, scan.r_max)

    def _run(self, points, furthest_only):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return _visible_kernel(*self._args, np.ascontiguousarray(pts[:, 0]), np.ascontiguousarray(pts[:, 1]),
                               *self._rest, furthest_only)

    def __call__(self, points) -> np.ndarray:
        return self._run(points, False)

    def furthest(self, points) -> int:
        ok = np.flatnonzero(self._run(points, True))
        return int(ok[-1]) if ok.size else -1


@dataclass
class PlannerConfig:
    inflation: float = 0.1
    horizon: float | None = None  # defaults to the scan's r_max
    beta: float = 0.25
    push: float = 0.5
    w_goal: float = 1.0
    w_obs: float = 4.0
    c_safe: float = 0.5


class WaypointPlanner:
    """Global plan once per episode, then one gap waypoint per control step.

    Besides the per-gap candidates, the plan goal itself is offered as a
    candidate whenever the straight run to it is clear in the current scan.
    """

    def __init__(self, grid: OccupancyGrid, start: Pose2D, goal: Pose2D, r_robot: float,
                 config: PlannerConfig | None = None, plan: GlobalPlan | None = None):
        self.config = config or PlannerConfig()
        self.r_robot = r_robot
        self.plan = plan if plan is not None else plan_global(
            grid, start, goal, self.config.inflation, r_robot, snap=True)
        self.goal = goal
        self.progress = 0

    def waypoint(self, scan: LaserScan, ego: Pose2D) -> tuple[tuple[float, float], dict]:
        cfg = self.config
        horizon = cfg.horizon if cfg.horizon is not None else scan.r_max
        visible = segment_visibility(scan, self.r_robot)
        self.progress = nearest_plan_index(self.plan, ego, self.progress)
        pg = extract_plan_goal(self.plan, ego, horizon, visible, self.progress)
        if self.progress >= len(self.plan) - 1 or math.hypot(self.goal.x - ego.x, self.goal.y - ego.y) <= horizon:
            if visible(np.array([[self.goal.x, self.goal.y]]))[0]:
                pg = self.goal
        raw = detect_gaps(scan, self.r_robot)
        manip = manipulate_gaps(simplify_gaps(raw, scan, self.r_robot), scan, self.r_robot)
        cands = place_waypoints(manip, pg, ego, scan, cfg.beta, cfg.push, self.r_robot)
        if visible(np.array([[pg.x, pg.y]]))[0]:
            cands.append(GapWaypoint((pg.x, pg.y), None, scan.index_of_bearing(_bearing(ego, (pg.x, pg.y)))))
        try:
            chosen = select_waypoint(cands, pg, scan, cfg.w_goal, cfg.w_obs, cfg.c_safe).position
        except NoCandidates:
            chosen = (pg.x, pg.y)
        debug = {"plan_goal": [pg.x, pg.y], "gaps": len(manip), "candidates": len(cands), "waypoint": list(chosen)}
        return chosen, debug
