"""Evolutionary curriculum scheduler.

The hardest-ranked variable is swept from its easiest to its hardest level,
one step each time the recent score clears the threshold. A finished sweep
bumps every other variable one level; after two sweeps the next ranked
variable becomes the target.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Sequence

from .envs import VARIABLES, EnvConfig
from .evaluator import DifficultyRanking

THRESHOLD = 0.75
LEVELS = 5
SWEEPS_PER_TARGET = 2
WINDOW = 50


@dataclass(frozen=True)
class CurriculumState:
    ranking: tuple[str, ...]
    target_index: int = 0
    target_level: int = 0
    other_levels: tuple[tuple[str, int], ...] = ()
    iterations_on_target: int = 0
    global_round: int = 0
    events: int = 0  # threshold events so far
    levels: int = LEVELS
    complete: bool = False

    @property
    def target(self) -> str | None:
        return None if self.complete else self.ranking[self.target_index]

    def level_of(self, name: str) -> int:
        if name == self.target:
            return self.target_level
        return dict(self.other_levels).get(name, 0)

    def level_vector(self) -> dict[str, int]:
        return {n: self.level_of(n) for n in VARIABLES}

    def to_dict(self) -> dict:
        return {
            "ranking": list(self.ranking),
            "target": self.target,
            "target_index": self.target_index,
            "target_level": self.target_level,
            "other_levels": dict(self.other_levels),
            "iterations_on_target": self.iterations_on_target,
            "global_round": self.global_round,
            "events": self.events,
            "levels": self.levels,
            "complete": self.complete,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CurriculumState":
        return cls(tuple(d["ranking"]), d["target_index"], d["target_level"],
                   tuple((n, int(d["other_levels"][n])) for n in VARIABLES if n in d["other_levels"]),
                   d["iterations_on_target"],
                   d["global_round"], d["events"], d["levels"], d["complete"])


def init_curriculum(ranking: DifficultyRanking | Sequence[str], levels: int = LEVELS) -> CurriculumState:
    names = tuple(ranking.names if isinstance(ranking, DifficultyRanking) else ranking)
    if not names:
        raise ValueError("ranking is empty")
    if levels < 2:
        raise ValueError("need at least two levels")
    return CurriculumState(names, other_levels=tuple((n, 0) for n in VARIABLES), levels=levels)


def advance(state: CurriculumState, recent_mean_perf: float, threshold: float = THRESHOLD) -> CurriculumState:
    if state.complete or recent_mean_perf < threshold:
        return state
    top = state.levels - 1
    if state.target_level < top:
        return replace(state, target_level=state.target_level + 1, events=state.events + 1)
    target = state.target
    others = {n: (v if n == target else min(v + 1, top)) for n, v in state.other_levels}
    done = state.iterations_on_target + 1
    if done < SWEEPS_PER_TARGET:
        return replace(state, target_level=0, iterations_on_target=done,
                       other_levels=tuple(others.items()), events=state.events + 1)
    # the retired target stays at its hardest level
    others[target] = top
    nxt = state.target_index + 1
    return replace(state, target_index=min(nxt, len(state.ranking) - 1), target_level=0,
                   iterations_on_target=0, other_levels=tuple(others.items()),
                   global_round=state.global_round + 1, events=state.events + 1,
                   complete=nxt >= len(state.ranking))


def emit_env_config(state: CurriculumState) -> EnvConfig:
    top = state.levels - 1
    return EnvConfig.from_levels({n: lv / top for n, lv in state.level_vector().items()})


class CurriculumScheduler:
    """Feeds the trainer environments and advances on the rolling mean of episode scores.

    The window holds the last ``window`` episode scores and is cleared
    whenever the state changes; ``advance`` is only consulted on a full window.
    """

    def __init__(self, state: CurriculumState, window: int = WINDOW, threshold: float = THRESHOLD,
                 trace_path=None):
        self.state = state
        self.threshold = threshold
        self.scores: deque[float] = deque(maxlen=window)
        self.trace_path = trace_path
        self.trace: list[dict] = []

    def current(self) -> EnvConfig:
        return emit_env_config(self.state)

    def report(self, episode_scores: Sequence[float]) -> None:
        self.scores.extend(float(s) for s in episode_scores)
        if len(self.scores) < self.scores.maxlen:
            return
        perf = sum(self.scores) / len(self.scores)
        before = self.state
        self.state = advance(before, perf, self.threshold)
        rec = {"before": before.to_dict(), "after": self.state.to_dict(), "perf": perf}
        self.trace.append(rec)
        if self.trace_path is not None:
            with open(self.trace_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        if self.state != before:
            self.scores.clear()


@dataclass
class HardestSource:
    """Fixed environment with every variable at its hardest level."""

    cfg: EnvConfig = field(default_factory=lambda: EnvConfig.from_levels({n: 1.0 for n in VARIABLES}))

    def current(self) -> EnvConfig:
        return self.cfg

    def report(self, episode_scores) -> None:
        pass
