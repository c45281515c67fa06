import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evonav.errors import InvalidParams, PackingFailure
from evonav.mapgen import (
    CONVEXITY_LEVELS,
    MapParams,
    RoomGraph,
    free_components,
    generate_map,
    longest_path,
    max_bends,
    parse_convexity,
)
from evonav.worldmodel import OccupancyGrid


def _segments_axis_aligned(points):
    return all(a[0] == b[0] or a[1] == b[1] for a, b in zip(points[:-1], points[1:]))


def test_single_room_has_no_corridors():
    grid, graph = generate_map(MapParams(room_number=1, seed=4))
    assert len(graph.rooms) == 1 and not graph.corridors
    _, n = free_components(grid.free)
    assert n == 1


def test_same_params_same_bytes():
    p = MapParams(room_number=4, convexity=math.inf, seed=7)
    a, _ = generate_map(p)
    b, _ = generate_map(p)
    assert a.occupied.tobytes() == b.occupied.tobytes()


@pytest.mark.parametrize("seed", range(10))
def test_straight_convexity_has_at_most_one_bend(seed):
    _, graph = generate_map(MapParams(room_number=4, convexity=math.inf, seed=seed))
    for c in graph.corridors:
        assert _segments_axis_aligned(c.points)
        assert c.bends() <= 1


@pytest.mark.parametrize("seed", range(10))
def test_convexity_one_zigzags(seed):
    _, graph = generate_map(MapParams(room_number=4, convexity=1, seed=seed))
    for c in graph.corridors:
        assert _segments_axis_aligned(c.points)
        assert c.bends() >= 3


def test_bend_budget():
    assert [max_bends(k) for k in CONVEXITY_LEVELS] == [8, 4, 3, 2, 1]


def test_convexity_spellings():
    assert parse_convexity("inf") == math.inf
    assert parse_convexity(100) == math.inf
    assert parse_convexity("3") == 3
    with pytest.raises(InvalidParams):
        parse_convexity(5)


@pytest.mark.parametrize("kw", [{"room_number": 0}, {"room_size": 1.5}, {"corridor_width": -0.1},
                                {"room_number": 2.5}])
def test_invalid_params(kw):
    with pytest.raises(InvalidParams):
        MapParams(**kw)


def test_packing_failure_on_tiny_world():
    with pytest.raises(PackingFailure):
        generate_map(MapParams(room_number=9, room_size=1.0, world_extent=6.0))


def _room_components(grid, graph):
    free = np.zeros_like(grid.free)
    r = grid.resolution
    for x0, y0, x1, y1 in graph.rooms:
        free[round(y0 / r):round(y1 / r), round(x0 / r):round(x1 / r)] = True
    return free_components(free)[1]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([1, 2, 4, 6, 9]), st.sampled_from(CONVEXITY_LEVELS))
def test_connected_with_exact_room_count(seed, rooms, conv):
    grid, graph = generate_map(MapParams(room_number=rooms, convexity=conv, seed=seed))
    _, n = free_components(grid.free)
    assert n == 1
    assert _room_components(grid, graph) == rooms


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.0, 0.9))
def test_corridor_width_monotone(seed, w):
    _, g1 = generate_map(MapParams(room_number=4, corridor_width=w, seed=seed))
    _, g2 = generate_map(MapParams(room_number=4, corridor_width=w + 0.1, seed=seed))
    assert min(c.width for c in g2.corridors) >= min(c.width for c in g1.corridors)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.0, 0.9))
def test_room_size_monotone(seed, s):
    def mean_area(size):
        _, g = generate_map(MapParams(room_number=4, room_size=size, seed=seed))
        return np.mean([(x1 - x0) * (y1 - y0) for x0, y0, x1, y1 in g.rooms])

    assert mean_area(s + 0.1) >= mean_area(s) - 1e-9


def test_graph_round_trip():
    _, graph = generate_map(MapParams(room_number=4, seed=1))
    assert RoomGraph.from_dict(graph.to_dict()) == graph


def test_params_round_trip():
    p = MapParams(room_number=3, room_size=0.8, corridor_width=0.5, convexity=math.inf, seed=5)
    assert MapParams.from_dict(p.to_dict()) == p


def _chain_map():
    """Four 1 m rooms in a row along y = 1, joined by 1 m corridors."""
    occ = np.ones((20, 80), dtype=bool)
    occ[10:13, 5:75] = False  # corridor strip
    rooms = []
    for k in range(4):
        x0 = 5 + 20 * k
        occ[6:16, x0:x0 + 10] = False
        rooms.append((x0 * 0.1, 0.6, (x0 + 10) * 0.1, 1.6))
    return OccupancyGrid(occ), RoomGraph(rooms=rooms, adjacency=[(0, 1), (1, 2), (2, 3)])


def test_longest_path_chain_picks_end_rooms():
    grid, graph = _chain_map()
    s, g = longest_path(grid, graph)
    c = graph.centers()
    assert math.dist((s.x, s.y), c[0]) < 0.1 and math.dist((g.x, g.y), c[3]) < 0.1


def test_longest_path_two_rooms_are_centres():
    grid, graph = generate_map(MapParams(room_number=2, seed=3))
    s, g = longest_path(grid, graph)
    got = sorted([(s.x, s.y), (g.x, g.y)])
    want = sorted(graph.centers())
    for a, b in zip(got, want):
        assert math.dist(a, b) < 0.1


def test_longest_path_single_room_is_diameter():
    occ = np.ones((8, 12), dtype=bool)
    occ[1:-1, 1:-1] = False
    grid = OccupancyGrid(occ)
    graph = RoomGraph(rooms=[(0.1, 0.1, 1.1, 0.7)])
    s, g = longest_path(grid, graph)
    # 4-connected BFS diameter of a 10 x 6 block is 9 + 5 steps
    steps = round(abs(s.x - g.x) / 0.1) + round(abs(s.y - g.y) / 0.1)
    assert steps == 14
