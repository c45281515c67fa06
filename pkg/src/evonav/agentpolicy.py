"""Collision-avoidance policies: a scripted baseline, a small learned policy and its trainer."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy.stats import rankdata

from . import seeding
from .errors import Divergence, NonFiniteParams
from .simcore import PolicyInput
from .worldmodel import DEFAULT_R_MAX, Command

# --- scripted baseline ---------------------------------------------------------


@dataclass(frozen=True)
class ScriptedConfig:
    influence: float = 1.0  # surface distance within which another agent deflects the ego
    horizon: float = 2.0  # s, cap on time to closest approach
    gain: float = 1.5
    slow_factor: float = 0.5


def act_scripted(inp: PolicyInput, config: ScriptedConfig = ScriptedConfig()) -> Command:
    """Head for the local goal, bent away from predicted closest-approach points.

    A conflict whose closest-approach offset vanishes (dead head-on) is
    resolved by pushing to the right of the goal direction.
    """
    e = inp.ego
    gx, gy = e.gx - e.px, e.gy - e.py
    dist = math.hypot(gx, gy)
    if dist < 1e-9:
        return Command(0.0, e.heading)
    ux, uy = gx / dist, gy / dist
    vdx, vdy = e.v_pref * ux, e.v_pref * uy
    push_x = push_y = 0.0
    worst = 0.0
    for ox, oy, ovx, ovy, orad in inp.others:
        px, py = ox - e.px, oy - e.py
        reach = config.influence + orad + e.radius
        if math.hypot(px, py) > reach:
            continue
        rvx, rvy = ovx - vdx, ovy - vdy
        v2 = rvx * rvx + rvy * rvy
        t = 0.0 if v2 < 1e-12 else min(max(-(px * rvx + py * rvy) / v2, 0.0), config.horizon)
        cx, cy = px + rvx * t, py + rvy * t
        c = math.hypot(cx, cy)
        w = max(0.0, 1.0 - c / reach) / (1.0 + t)
        if w == 0.0:
            continue
        if c < 1e-6 * reach:
            ax, ay = uy, -ux
        else:
            ax, ay = -cx / c, -cy / c
            if abs(ax * uy - ay * ux) < 1e-9 and ax * ux + ay * uy < 0:
                ax, ay = ax + uy, ay - ux
        push_x += w * ax
        push_y += w * ay
        worst = max(worst, w)
    hx, hy = ux + config.gain * push_x, uy + config.gain * push_y
    if math.hypot(hx, hy) < 1e-9:
        hx, hy = uy, -ux
    speed = e.v_pref * (1.0 - config.slow_factor * min(worst, 1.0))
    return Command(speed, math.atan2(hy, hx))


class ScriptedPolicy:
    def __init__(self, config: ScriptedConfig = ScriptedConfig()):
        self.config = config

    def __call__(self, inp: PolicyInput) -> Command:
        return act_scripted(inp, self.config)


class StaticPolicy:
    """Never moves; used for time-out checks."""

    def __call__(self, inp: PolicyInput) -> Command:
        return Command(0.0, inp.ego.heading)


# --- learned policy -------------------------------------------------------------

K_NEAREST = 4
N_FEATURES = 5 + 5 * K_NEAREST  # bias, goal distance, sin/cos goal bearing, clearance, k agents
N_OUTPUTS = 2
PARAM_VERSION = "evonav-linear-v1"
MAX_TURN = math.pi / 4


@dataclass(eq=False)
class PolicyParams:
    theta: np.ndarray
    version: str = PARAM_VERSION
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float).reshape(-1)
        if self.theta.size != N_FEATURES * N_OUTPUTS:
            raise ValueError(f"expected {N_FEATURES * N_OUTPUTS} parameters, got {self.theta.size}")

    @classmethod
    def zeros(cls, **metadata) -> "PolicyParams":
        return cls(np.zeros(N_FEATURES * N_OUTPUTS), metadata=metadata)

    def matrix(self) -> np.ndarray:
        return self.theta.reshape(N_OUTPUTS, N_FEATURES)

    def save(self, path) -> None:
        """Header line ``# <version> <json metadata>`` then one value per line."""
        head = f"# {self.version} {json.dumps(self.metadata, sort_keys=True)}\n"
        body = "".join(f"{v!r}\n" for v in self.theta.tolist())
        Path(path).write_text(head + body, encoding="utf-8")

    @classmethod
    def load(cls, path) -> "PolicyParams":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or not lines[0].startswith("# "):
            raise ValueError(f"{path}: missing policy header")
        version, _, meta = lines[0][2:].partition(" ")
        if version != PARAM_VERSION:
            raise ValueError(f"{path}: unsupported policy version {version!r}")
        theta = np.array([float(x) for x in lines[1:] if x.strip()])
        return cls(theta, version, json.loads(meta) if meta else {})


def features(inp: PolicyInput, r_max: float = DEFAULT_R_MAX) -> np.ndarray:
    e = inp.ego
    c, s = math.cos(e.heading), math.sin(e.heading)
    gx, gy = e.gx - e.px, e.gy - e.py
    dist = math.hypot(gx, gy)
    bearing = math.atan2(-s * gx + c * gy, c * gx + s * gy)
    f = np.zeros(N_FEATURES)
    f[0] = 1.0
    f[1] = min(dist, r_max) / r_max
    f[2] = math.sin(bearing)
    f[3] = math.cos(bearing)
    others = inp.others
    if len(others):
        rel = others[:, :2] - [e.px, e.py]
        surf = np.hypot(rel[:, 0], rel[:, 1]) - others[:, 4] - e.radius
        f[4] = min(float(surf.min()), r_max) / r_max
        k = min(K_NEAREST, len(others))
        rx = c * rel[:k, 0] + s * rel[:k, 1]
        ry = -s * rel[:k, 0] + c * rel[:k, 1]
        vx = c * others[:k, 2] + s * others[:k, 3]
        vy = -s * others[:k, 2] + c * others[:k, 3]
        block = np.column_stack([rx / r_max, ry / r_max, vx / 2.0, vy / 2.0, others[:k, 4]])
        f[5:5 + 5 * k] = block.ravel()
    else:
        f[4] = 1.0
    return f


def act_learned(params: PolicyParams, inp: PolicyInput) -> Command:
    """Linear read-out: speed ``v_pref * sigmoid(a)``, heading change ``(pi/4) * tanh(b)``."""
    if not np.all(np.isfinite(params.theta)):
        raise NonFiniteParams("policy parameters contain non-finite values")
    a, b = params.matrix() @ features(inp)
    speed = inp.ego.v_pref / (1.0 + math.exp(-max(min(a, 50.0), -50.0)))
    return Command(speed, inp.ego.heading + MAX_TURN * math.tanh(b))


class LearnedPolicy:
    def __init__(self, params: PolicyParams):
        if not np.all(np.isfinite(params.theta)):
            raise NonFiniteParams("policy parameters contain non-finite values")
        self.params = params

    def __call__(self, inp: PolicyInput) -> Command:
        return act_learned(self.params, inp)


# --- trainer -------------------------------------------------------------------------


class EnvSource(Protocol):
    """Where the trainer gets its environment configuration, and where it reports back."""

    def current(self):  # -> envs.EnvConfig
        ...

    def report(self, episode_scores: Sequence[float]) -> None:
        ...


class FixedSource:
    def __init__(self, cfg):
        self.cfg = cfg

    def current(self):
        return self.cfg

    def report(self, episode_scores):
        pass


@dataclass(frozen=True)
class TrainerConfig:
    generations: int = 30
    pairs: int = 4  # antithetic pairs per generation
    episodes: int = 4  # shared episodes per member per generation
    sigma: float = 0.3
    learning_rate: float = 0.3
    time_limit: float = 10.0
    goal_distance: tuple[float, float] = (2.0, 5.0)
    n_beams: int = 90
    maps: int = 8  # map seeds cycled per configuration


def centered_ranks(x: np.ndarray) -> np.ndarray:
    """Ranks scaled to [-0.5, 0.5]; tied fitnesses share their average rank."""
    r = rankdata(x, method="average") - 1.0
    return r / max(len(x) - 1, 1) - 0.5


def play(params: PolicyParams, episodes, time_limit: float, n_beams: int = 360) -> list:
    """Run ``params`` on a list of :class:`envs.Episode`; returns the episode results."""
    from .simcore import EpisodeConfig, run_episode

    cfg = EpisodeConfig(time_limit=time_limit, n_beams=n_beams)
    pol = LearnedPolicy(params)
    return [run_episode(ep.grid, ep.peds, pol, ep.start, ep.goal, cfg, plan=ep.plan) for ep in episodes]


def evaluate_params(params: PolicyParams, episodes, time_limit: float, n_beams: int = 360,
                    metric: str = "mean_perf") -> list[float]:
    """Per-episode scores of ``params``: the per-step mean (``mean_perf``) or
    the clipped episode return (``total_perf``)."""
    if metric not in ("mean_perf", "total_perf"):
        raise ValueError(f"unknown metric {metric!r}")
    return [getattr(r, metric) for r in play(params, episodes, time_limit, n_beams)]


def _with_plans(episodes, r_robot: float):
    from .envs import Episode
    from .errors import NoPath
    from .navplan import plan_global

    out = []
    for ep in episodes:
        try:
            plan = plan_global(ep.grid, ep.start, ep.goal, r_robot=r_robot, snap=True)
        except NoPath:
            continue
        out.append(Episode(ep.grid, ep.start, ep.goal, ep.peds, plan, ep.meta))
    return out


def train_policy(
    initial: PolicyParams,
    source: EnvSource,
    config: TrainerConfig = TrainerConfig(),
    seed: int = 0,
    log_path=None,
    start_generation: int = 0,
    on_generation: Callable[[int, PolicyParams, dict], None] | None = None,
) -> tuple[PolicyParams, list[dict]]:
    """Antithetic evolution strategy with rank-shaped fitness.

    Each generation draws its episodes from ``source.current()``; every
    perturbed member and the unperturbed centre play the same episodes.
    Fitness is the per-step mean PerfScore, which keeps ranking members
    where clipped returns would all sit at -1. The centre's clipped episode
    returns are what gets reported back to ``source``. Generation ``g`` uses noise and episodes derived from
    ``(seed, g)`` only, so a run resumed at ``start_generation`` continues
    exactly where it stopped.
    """
    from .envs import sample_episode
    from .worldmodel import DEFAULT_R_ROBOT

    theta = initial.theta.copy()
    if not np.all(np.isfinite(theta)):
        raise NonFiniteParams("initial parameters contain non-finite values")
    log: list[dict] = []
    fh = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for gen in range(start_generation, config.generations):
            env = source.current()
            eps = [sample_episode(env, seeding.derive_seed(seed, "trainer.episodes", gen), i, config.maps,
                                  config.goal_distance) for i in range(config.episodes)]
            eps = _with_plans(eps, DEFAULT_R_ROBOT)
            eps_noise = seeding.rng(seed, "trainer.noise", gen).standard_normal((config.pairs, theta.size))
            fit = np.zeros(2 * config.pairs)
            for j in range(config.pairs):
                for k, sign in enumerate((1.0, -1.0)):
                    cand = PolicyParams(theta + sign * config.sigma * eps_noise[j])
                    r = evaluate_params(cand, eps, config.time_limit, config.n_beams)
                    fit[2 * j + k] = float(np.mean(r)) if r else 0.0
            played = play(PolicyParams(theta), eps, config.time_limit, config.n_beams)
            centre = [r.total_perf for r in played]
            mean_perf = float(np.mean([r.mean_perf for r in played])) if played else 0.0
            episode_return = float(np.mean(centre)) if centre else 0.0
            if not (math.isfinite(mean_perf) and math.isfinite(episode_return) and np.all(np.isfinite(fit))):
                raise Divergence(f"non-finite performance at generation {gen}")
            shaped = centered_ranks(fit)
            grad = ((shaped[0::2] - shaped[1::2])[:, None] * eps_noise).sum(axis=0)
            with np.errstate(invalid="ignore", over="ignore"):  # checked just below
                theta = theta + config.learning_rate / (2 * config.pairs) * grad
            if not np.all(np.isfinite(theta)):
                raise Divergence(f"non-finite parameters at generation {gen}")
            source.report(centre)
            rec = {"generation": gen, "mean_perf": mean_perf, "episode_return": episode_return,
                   "population_perf": float(np.mean(fit)),
                   "best_perf": float(fit.max()), "env": env.to_dict(), "episodes": len(eps)}
            log.append(rec)
            if fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
                fh.flush()
            if on_generation is not None:
                on_generation(gen, PolicyParams(theta, initial.version, initial.metadata), rec)
    finally:
        if fh:
            fh.close()
    meta = dict(initial.metadata, seed=seed, generations=config.generations)
    return PolicyParams(theta, initial.version, meta), log
