"""Run configuration: dataclass defaults, a flat ``key = value`` file, and flag overrides."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # world
    r_max: float = 5.0
    r_robot: float = 0.2
    dt: float = 0.1
    n_beams: int = 360
    time_limit: float = 30.0
    goal_radius: float = 0.3
    terminal_wall: bool = False
    # evaluator
    maps_per_extreme: int = 50
    episodes: int = 200
    iterations: int = 0  # 0 means no step cap
    fit_points: int = 5
    # curriculum
    threshold: float = 0.75
    levels: int = 5
    window: int = 50
    # trainer
    generations: int = 30
    pairs: int = 4
    train_episodes: int = 4
    sigma: float = 0.3
    learning_rate: float = 0.3
    train_time_limit: float = 10.0
    train_beams: int = 90
    out_dir: str = "runs"

    def __post_init__(self):
        checks = [
            (self.r_max > 0, "r_max must be positive"),
            (self.r_robot > 0, "r_robot must be positive"),
            (self.dt > 0, "dt must be positive"),
            (self.n_beams >= 8, "n_beams must be at least 8"),
            (self.time_limit >= self.dt, "time_limit must cover one step"),
            (self.goal_radius > 0, "goal_radius must be positive"),
            (self.maps_per_extreme >= 1 and self.episodes >= 1, "evaluation budget must be positive"),
            (self.iterations >= 0, "iterations must be non-negative"),
            (self.fit_points >= 2, "fit_points must be at least 2"),
            (-1.0 <= self.threshold <= 1.0, "threshold must lie in [-1, 1]"),
            (self.levels >= 2 and self.window >= 1, "levels >= 2 and window >= 1 required"),
            (self.generations >= 0 and self.pairs >= 1 and self.train_episodes >= 1, "bad trainer budget"),
            (self.sigma > 0 and math.isfinite(self.learning_rate), "bad trainer step sizes"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(name: str, typ: Any, raw: Any):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if typ in (bool, "bool"):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if typ in (int, "int"):
            return int(text)
        if typ in (float, "float"):
            return float(text)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None
    return text


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """``key = value`` per line; blank lines and ``#`` comments are ignored."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key] = value
    return out


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Defaults, then the file, then ``overrides`` (``None`` values are skipped)."""
    known = {f.name: f.type for f in fields(RunConfig)}
    merged: dict[str, Any] = {}
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        merged.update(parse_config_text(text, str(path)))
    for k, v in (overrides or {}).items():
        if v is not None:
            merged[k] = v
    unknown = sorted(set(merged) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return RunConfig(**{k: _coerce(k, known[k], v) for k, v in merged.items()})


def dump_config(cfg: RunConfig) -> str:
    return "".join(f"{k} = {str(v).lower() if isinstance(v, bool) else v}\n" for k, v in cfg.to_dict().items())
