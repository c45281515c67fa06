import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from evonav.errors import EmptyTrace
from evonav.perfscore import PerfInputs, episode_perf, episode_return, perf_step

clear = st.floats(-2.0, 10.0, allow_nan=False)


def test_goal_scores_one():
    assert perf_step(PerfInputs(True, -1.0, -1.0)) == 1.0


def test_wall_case():
    assert perf_step(PerfInputs(False, -0.01, 1.0)) == -0.25


def test_band_edge_is_zero():
    assert perf_step(PerfInputs(False, 1.0, 0.3)) == 0.0


@pytest.mark.parametrize("d, expected", [(0.0, -0.259182), (0.15, -0.139292)])
def test_proximity_values(d, expected):
    assert perf_step(PerfInputs(False, 1.0, d)) == pytest.approx(expected, abs=1e-6)


def test_pedestrian_penetration_below_wall_penalty():
    assert perf_step(PerfInputs(False, 1.0, -0.03)) < -0.25


def test_cooccurring_cases_take_the_lower():
    assert perf_step(PerfInputs(False, -0.1, 0.29)) == -0.25
    assert perf_step(PerfInputs(False, -0.1, -0.5)) == pytest.approx(-(1 - math.exp(-0.8)))


def test_episode_perf_examples():
    assert episode_perf([1.0]) == 1.0
    assert episode_perf([0, 0, -0.25, 1]) == 0.1875
    with pytest.raises(EmptyTrace):
        episode_perf([])


def test_episode_return_is_clipped():
    assert episode_return([1.0]) == 1.0
    assert episode_return([-0.25] * 10) == -1.0
    assert episode_return([-0.25, 1.0]) == 0.75


@given(st.booleans(), clear, clear)
def test_range_and_goal_dominance(at_goal, g, d):
    s = perf_step(PerfInputs(at_goal, g, d))
    assert -1.0 <= s <= 1.0
    if at_goal:
        assert s == 1.0


@given(st.floats(-1.0, 0.3), st.floats(-1.0, 0.3))
def test_proximity_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    assert perf_step(PerfInputs(False, 1.0, lo)) <= perf_step(PerfInputs(False, 1.0, hi))


@given(st.lists(st.floats(-1, 1), min_size=1, max_size=200))
def test_episode_perf_matches_fsum(trace):
    assert episode_perf(trace) == pytest.approx(math.fsum(trace) / len(trace), abs=1e-12)
