"""PerfScore: the per-step reward that doubles as the evaluation metric.

The dynamic-obstacle case reads the pedestrian clearance ``d_min`` both in
its condition and in its value. When a wall penetration and pedestrian
proximity happen in the same step the lower of the two scores is used.
"""

import math
from dataclasses import dataclass
from typing import Sequence

from .errors import EmptyTrace

GOAL_SCORE = 1.0
WALL_SCORE = -0.25
PED_BAND = 0.3


@dataclass(frozen=True)
class PerfInputs:
    at_goal: bool
    g_min_static: float
    d_min_dynamic: float = math.inf


def ped_penalty(d_min: float) -> float:
    return -(1.0 - math.exp(d_min - PED_BAND))


def perf_step(inputs: PerfInputs) -> float:
    if inputs.at_goal:
        return GOAL_SCORE
    score = 0.0
    if inputs.g_min_static < 0.0:
        score = WALL_SCORE
    if inputs.d_min_dynamic <= PED_BAND:
        score = min(score, ped_penalty(inputs.d_min_dynamic))
    return score


def episode_perf(trace: Sequence[float]) -> float:
    if len(trace) == 0:
        raise EmptyTrace("cannot average an empty PerfScore trace")
    return math.fsum(trace) / len(trace)


def episode_return(trace: Sequence[float]) -> float:
    """Summed PerfScore of one episode, clipped to [-1, 1].

    The curriculum threshold is applied to this score; a clean run to the
    goal scores exactly 1.
    """
    if len(trace) == 0:
        raise EmptyTrace("cannot sum an empty PerfScore trace")
    return max(-1.0, min(1.0, math.fsum(trace)))
