"""Variable sensitivity: extreme-level PerfScore deltas, difficulty ranking and linear response fits."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import seeding
from .envs import RANGES, VARIABLES, EnvConfig, sample_episode
from .errors import BudgetTooSmall, MissingVariable
from .mapgen import CONVEXITY_LEVELS

# A runner plays one episode of a configuration and returns its per-step PerfScore trace.
Runner = Callable[[EnvConfig, int, int, int], Sequence[float]]

# GA3C extreme-level deltas from the reference study, used as the default ranking
REFERENCE_DELTAS = {
    "room_number": 0.6093,
    "ped_policy": 0.2759,
    "ped_count": 0.2166,
    "ped_speed": 0.1753,
    "room_size": 0.0509,
    "corridor_width": 0.0074,
    "convexity": 0.0064,
}


@dataclass(frozen=True)
class VariableSpec:
    name: str
    min: float
    max: float
    levels: int = 5

    def __post_init__(self):
        if self.name not in VARIABLES:
            raise ValueError(f"unknown variable {self.name!r}")
        if not self.min < self.max:
            raise ValueError(f"{self.name}: min must be below max")
        if self.levels < 2:
            raise ValueError("levels must be at least 2")

    def sample_levels(self, points: int) -> np.ndarray:
        """Evenly spaced levels; convexity uses its [0, 1] position axis (1.0 is infinity)."""
        if self.name == "convexity":
            return np.linspace(0.0, 1.0, points)
        return np.linspace(self.min, self.max, points)

    def physical(self, level: float):
        if self.name == "convexity":
            return CONVEXITY_LEVELS[int(round(level * (len(CONVEXITY_LEVELS) - 1)))]
        if self.name in ("room_number", "ped_count"):
            return int(round(level))
        return float(level)


def default_specs() -> list[VariableSpec]:
    return [VariableSpec(n, *RANGES[n]) for n in VARIABLES]


def baseline_config() -> EnvConfig:
    """Every variable at the middle of its range."""
    return EnvConfig.from_levels({n: 0.5 for n in VARIABLES})


@dataclass(frozen=True)
class Budget:
    maps_per_extreme: int = 50
    episodes: int = 200
    iterations: int | None = None  # optional cap on total simulation steps per configuration

    def check(self):
        if self.maps_per_extreme < 1 or self.episodes < 1:
            raise BudgetTooSmall("budget must be positive")
        if self.episodes < self.maps_per_extreme:
            raise BudgetTooSmall(f"{self.episodes} episodes cannot visit {self.maps_per_extreme} maps")
        if self.iterations is not None and self.iterations < self.maps_per_extreme:
            raise BudgetTooSmall(f"{self.iterations} steps cannot cover one episode per map")


@dataclass(frozen=True)
class DifficultyRanking:
    entries: tuple[tuple[str, float], ...]

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.entries]

    def delta(self, name: str) -> float:
        return dict(self.entries)[name]

    def to_dict(self) -> dict:
        return {"ranking": [{"variable": n, "delta": d} for n, d in self.entries]}

    @classmethod
    def from_dict(cls, d: dict) -> "DifficultyRanking":
        return cls(tuple((e["variable"], float(e["delta"])) for e in d["ranking"]))


@dataclass(frozen=True)
class VariableResponse:
    variable: str
    levels: tuple[float, ...]
    means: tuple[float, ...]
    counts: tuple[int, ...]
    slope: float
    intercept: float
    residual: float

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["level", "mean", "count"])
            for lv, m, c in zip(self.levels, self.means, self.counts):
                w.writerow([repr(float(lv)), repr(float(m)), c])


def rank_from_deltas(deltas: Mapping[str, float]) -> DifficultyRanking:
    """Descending by delta; equal deltas keep the canonical variable order."""
    missing = [n for n in VARIABLES if n not in deltas]
    if missing:
        raise MissingVariable(f"missing deltas for {', '.join(missing)}")
    unknown = sorted(set(deltas) - set(VARIABLES))
    if unknown:
        raise ValueError(f"unknown variables {unknown}")
    order = sorted(VARIABLES, key=lambda n: (-float(deltas[n]), VARIABLES.index(n)))
    return DifficultyRanking(tuple((n, float(deltas[n])) for n in order))


def mean_perf(runner: Runner, cfg: EnvConfig, budget: Budget, seed: int) -> tuple[float, int]:
    """Step-pooled mean PerfScore of ``cfg`` over the budget's episodes, cycling map seeds."""
    budget.check()
    total, steps = 0.0, 0
    parts = []
    for ep in range(budget.episodes):
        trace = runner(cfg, ep, budget.maps_per_extreme, seed)
        if budget.iterations is not None:
            trace = list(trace)[: budget.iterations - steps]
        parts.append(math.fsum(trace))
        steps += len(trace)
        if budget.iterations is not None and steps >= budget.iterations:
            break
    total = math.fsum(parts)
    return (total / steps if steps else 0.0), steps


def _config_with(base: EnvConfig, name: str, value) -> EnvConfig:
    return EnvConfig(**{**{n: getattr(base, n) for n in VARIABLES}, name: value})


def evaluate_extremes(
    runner: Runner,
    variables: Sequence[VariableSpec] | None = None,
    budget: Budget = Budget(),
    baseline: EnvConfig | None = None,
    seed: int = 0,
) -> tuple[DifficultyRanking, dict]:
    """Delta = mean PerfScore at each variable's min endpoint minus at its max endpoint.

    Returns the ranking plus the per-extreme means. Variables not listed get
    a delta of 0 so the ranking always covers all seven.
    """
    budget.check()
    variables = list(variables or default_specs())
    base = baseline or baseline_config()
    deltas = {n: 0.0 for n in VARIABLES}
    detail = {}
    for spec in variables:
        lo_level, hi_level = spec.sample_levels(2)
        means = []
        for lv in (lo_level, hi_level):
            sub = seeding.derive_seed(seed, f"evaluator.{spec.name}", int(lv == hi_level))
            m, _ = mean_perf(runner, _config_with(base, spec.name, spec.physical(lv)), budget, sub)
            means.append(m)
        deltas[spec.name] = means[0] - means[1]
        detail[spec.name] = {"min": means[0], "max": means[1]}
    return rank_from_deltas(deltas), detail


def fit_line(levels: Sequence[float], means: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares ``mean = slope * level + intercept``; returns (slope, intercept, residual norm)."""
    x = np.asarray(levels, dtype=float)
    y = np.asarray(means, dtype=float)
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.linalg.norm(y - A @ coef))
    return float(coef[0]), float(coef[1]), resid


def fit_response(
    runner: Runner,
    variable: VariableSpec,
    points: int = 5,
    budget: Budget = Budget(),
    baseline: EnvConfig | None = None,
    seed: int = 0,
) -> VariableResponse:
    if points < 2:
        raise ValueError("points must be at least 2")
    budget.check()
    base = baseline or baseline_config()
    levels = variable.sample_levels(points)
    means, counts = [], []
    for i, lv in enumerate(levels):
        sub = seeding.derive_seed(seed, f"fit.{variable.name}", i)
        m, n = mean_perf(runner, _config_with(base, variable.name, variable.physical(lv)), budget, sub)
        means.append(m)
        counts.append(n)
    slope, intercept, resid = fit_line(levels, means)
    return VariableResponse(variable.name, tuple(float(v) for v in levels), tuple(means), tuple(counts),
                            slope, intercept, resid)


# --- runners ----------------------------------------------------------------------


def _level_of(cfg: EnvConfig, name: str) -> float:
    v = getattr(cfg, name)
    if name == "convexity":
        return CONVEXITY_LEVELS.index(v) / (len(CONVEXITY_LEVELS) - 1)
    return float(v)


@dataclass(frozen=True)
class SyntheticRunner:
    """Per-step scores whose expectation is ``intercept + slope * level(variable)``.

    With ``noise`` > 0 each step's score is drawn uniformly within ``noise``
    of that expectation; the level is the physical value (convexity: its
    position on the [0, 1] axis).
    """

    variable: str = "room_number"
    slope: float = -0.1
    intercept: float = 1.0
    noise: float = 0.0
    steps: int = 10

    def expected(self, cfg: EnvConfig) -> float:
        return self.intercept + self.slope * _level_of(cfg, self.variable)

    def __call__(self, cfg: EnvConfig, episode: int, maps: int, seed: int) -> list[float]:
        mu = self.expected(cfg)
        if self.noise == 0.0:
            return [mu] * self.steps
        rng = seeding.rng(seed, "synthetic", episode)
        return list(mu + rng.uniform(-self.noise, self.noise, self.steps))


@dataclass(frozen=True)
class OracleRunner:
    """Scores 1 on every step of every environment."""

    steps: int = 1

    def __call__(self, cfg, episode, maps, seed):
        return [1.0] * self.steps


@dataclass
class PolicyRunner:
    """Real episodes: map ``episode % maps`` of the configuration, sampled start and goal."""

    policy_factory: Callable[[], Callable]
    episode_config: object = None
    goal_distance: tuple[float, float] = (3.0, 8.0)

    def __call__(self, cfg, episode, maps, seed):
        from .simcore import EpisodeConfig, run_episode

        ep = sample_episode(cfg, seed, episode, maps, self.goal_distance)
        res = run_episode(ep.grid, ep.peds, self.policy_factory(), ep.start, ep.goal,
                          self.episode_config or EpisodeConfig())
        return res.perf_trace


def write_ranking(path, ranking: DifficultyRanking, detail: dict | None = None) -> None:
    doc = ranking.to_dict()
    if detail:
        doc["extremes"] = detail
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
