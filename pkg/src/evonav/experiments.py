"""Desk-scale experiments: the static-map success trend and curriculum vs fixed-hardest training."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import seeding
from .agentpolicy import PolicyParams, ScriptedPolicy, TrainerConfig, _with_plans, evaluate_params, train_policy
from .curriculum import CurriculumScheduler, HardestSource, init_curriculum
from .envs import VARIABLES, EnvConfig, sample_episode
from .evaluator import REFERENCE_DELTAS, rank_from_deltas
from .mapgen import MapParams, generate_map, longest_path
from .simcore import EpisodeConfig, run_episode

# (room_number, room_size, corridor_width, convexity) with the varied factor first in each block
TABLE_V_GRID = {
    "room_size": [(4, s, 0.5, 1) for s in (0.7, 0.8, 0.9, 1.0)],
    "corridor_width": [(4, 0.8, w, 1) for w in (0.5, 0.6, 0.7, 0.8)],
    "convexity": [(4, 0.8, 0.5, k) for k in (1, 2, 3, 4)],
    "room_number": [(n, 0.8, 0.5, 1) for n in (4, 5, 6, 7)],
}


def success_rate(map_row, episodes: int, seed: int = 0, config: EpisodeConfig = EpisodeConfig()) -> float:
    """Scripted policy along each map's longest room-to-room path, one fresh map seed per episode."""
    rn, rs, cw, cv = map_row
    wins = 0
    for i in range(episodes):
        params = MapParams(rn, rs, cw, cv, seed=seeding.derive_seed(seed, f"tablev.{rn}.{rs}.{cw}.{cv}", i))
        grid, graph = generate_map(params)
        start, goal = longest_path(grid, graph)
        wins += run_episode(grid, None, ScriptedPolicy(), start, goal, config).success
    return wins / episodes


def spearman(values) -> float:
    """Rank correlation with the series index; a constant series counts as 0."""
    rho = stats.spearmanr(np.arange(len(values)), values).statistic
    return 0.0 if math.isnan(rho) else float(rho)


def table_v_trend(episodes: int = 50, seed: int = 0) -> dict:
    rates = {name: [success_rate(row, episodes, seed) for row in rows] for name, rows in TABLE_V_GRID.items()}
    return {
        "rates": rates,
        "spearman": {k: spearman(v) for k, v in rates.items()},
        "spread": {k: max(v) - min(v) for k, v in rates.items()},
    }


@dataclass
class BenefitConfig:
    seeds: int = 10
    trainer: TrainerConfig = field(default_factory=lambda: TrainerConfig(generations=20))
    window: int = 8
    held_out: int = 40
    held_out_maps: int = 10
    held_out_seed: int = 999
    eval_beams: int = 90


def held_out_episodes(cfg: BenefitConfig):
    hard = EnvConfig.from_levels({n: 1.0 for n in VARIABLES})
    eps = [sample_episode(hard, cfg.held_out_seed, i, cfg.held_out_maps, cfg.trainer.goal_distance)
           for i in range(cfg.held_out)]
    return _with_plans(eps, 0.2)


def curriculum_benefit(cfg: BenefitConfig = BenefitConfig(), log=print) -> dict:
    """Train curriculum and fixed-hardest policies per seed, score both on the same hardest episodes."""
    held = held_out_episodes(cfg)
    ranking = rank_from_deltas(REFERENCE_DELTAS)
    rows = []
    for seed in range(cfg.seeds):
        row = {"seed": seed}
        for mode in ("curriculum", "hardest"):
            t0 = time.time()
            if mode == "curriculum":
                source = CurriculumScheduler(init_curriculum(ranking), window=cfg.window)
            else:
                source = HardestSource()
            params, _ = train_policy(PolicyParams.zeros(), source, cfg.trainer, seed)
            row[mode] = float(np.mean(evaluate_params(params, held, cfg.trainer.time_limit, cfg.eval_beams)))
            if mode == "curriculum":
                row["levels"] = source.state.level_vector()
            log(f"seed {seed} {mode:10s} held-out mean_perf {row[mode]:+.4f} ({time.time() - t0:.0f}s)")
        rows.append(row)
    wins = sum(r["curriculum"] > r["hardest"] for r in rows)
    ties = sum(r["curriculum"] == r["hardest"] for r in rows)
    n = len(rows) - ties
    p = stats.binomtest(wins, n, 0.5, alternative="greater").pvalue if n else 1.0
    return {
        "rows": rows,
        "wins": wins,
        "ties": ties,
        "p_value": float(p),
        "median_curriculum": float(np.median([r["curriculum"] for r in rows])),
        "median_hardest": float(np.median([r["hardest"] for r in rows])),
    }
