"""Command-line front door: ``evonav <subcommand> [options]``.

Exit status: 0 success, 2 configuration error, 3 input/output error,
4 domain error (invalid parameters, unreachable goals, budget problems).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import seeding
from .errors import ConfigError, EvonavError
from .evaluator import REFERENCE_DELTAS

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DOMAIN = 0, 2, 3, 4

def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path: Path, command: str, cfg, args: dict, inputs=(), outputs=()) -> Path:
    doc = {
        "command": command,
        "version": _version(),
        "config": cfg.to_dict(),
        "arguments": {k: v for k, v in sorted(args.items()) if k not in ("func", "config")},
        "inputs": {str(p): digest(p) for p in inputs},
        "outputs": {str(p): digest(p) for p in outputs},
        "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    path = Path(path)
    path.write_text(json.dumps(doc, sort_keys=True, indent=2, default=str) + "\n", encoding="utf-8")
    return path


def _out_dir(args, cfg) -> Path:
    d = Path(args.out or cfg.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _config(args):
    from .config import load_config

    over = {"seed": args.seed}
    for key in ("time_limit", "maps_per_extreme", "episodes", "iterations", "fit_points", "generations", "window"):
        if hasattr(args, key):
            over[key] = getattr(args, key)
    return load_config(args.config, over)


def _xy(text: str | None):
    if text is None:
        return None
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"expected 'x,y', got {text!r}") from None
    return x, y


def _policy(spec: str):
    from .agentpolicy import LearnedPolicy, PolicyParams, ScriptedPolicy, StaticPolicy

    if spec == "scripted":
        return ScriptedPolicy
    if spec == "static":
        return StaticPolicy
    params = PolicyParams.load(spec)
    return lambda: LearnedPolicy(params)


def _runner(args, cfg):
    from .evaluator import OracleRunner, PolicyRunner, SyntheticRunner
    from .simcore import EpisodeConfig

    if args.policy == "oracle":
        return OracleRunner()
    if args.policy == "synthetic":
        return SyntheticRunner(args.synthetic_variable, args.synthetic_slope, args.synthetic_intercept,
                               args.synthetic_noise)
    ep_cfg = EpisodeConfig(dt=cfg.dt, goal_radius=cfg.goal_radius, time_limit=cfg.time_limit,
                           n_beams=cfg.n_beams, r_max=cfg.r_max, r_robot=cfg.r_robot,
                           terminal_wall=cfg.terminal_wall)
    return PolicyRunner(_policy(args.policy), ep_cfg)


def _budget(cfg):
    from .evaluator import Budget

    return Budget(cfg.maps_per_extreme, cfg.episodes, cfg.iterations or None)


# --- subcommands -------------------------------------------------------------------


def cmd_gen_map(args) -> int:
    from .mapgen import MapParams, generate_map, parse_convexity
    from .worldmodel import write_grid

    cfg = _config(args)
    params = MapParams(room_number=args.rooms, room_size=args.room_size, corridor_width=args.corridor,
                       convexity=parse_convexity(args.convexity), world_extent=args.extent, seed=cfg.seed)
    grid, graph = generate_map(params)
    out = _out_dir(args, cfg)
    stem = out / args.name
    pgm, meta = write_grid(stem, grid, {"params": params.to_dict(), "graph": graph.to_dict()})
    write_manifest(out / f"{args.name}.manifest.json", "gen-map", cfg, vars(args), outputs=[pgm, meta])
    free = float(grid.free.mean())
    print(f"rooms={params.room_number} corridors={len(graph.corridors)} free_fraction={free:.4f} -> {pgm}")
    return EXIT_OK


def cmd_run_episode(args) -> int:
    from .mapgen import RoomGraph, longest_path
    from .pedsim import PedParams
    from .simcore import EpisodeConfig, run_episode
    from .worldmodel import Pose2D, read_grid

    cfg = _config(args)
    grid, meta = read_grid(args.map)
    start, goal = _xy(args.start), _xy(args.goal)
    if start is None or goal is None:
        s, g = longest_path(grid, RoomGraph.from_dict(meta["graph"]))
        start = start or (s.x, s.y)
        goal = goal or (g.x, g.y)
    factory = _policy(args.policy)
    ep_cfg = EpisodeConfig(dt=cfg.dt, goal_radius=cfg.goal_radius, time_limit=cfg.time_limit,
                           n_beams=cfg.n_beams, r_max=cfg.r_max, r_robot=cfg.r_robot,
                           terminal_wall=cfg.terminal_wall, record_trace=args.trace is not None)
    out = _out_dir(args, cfg)
    rec_path = out / args.records
    trace_path = out / args.trace if args.trace else None
    successes = collisions = 0
    for i in range(args.repeat):
        ped_seed = seeding.derive_seed(cfg.seed, "episode.peds", i)
        peds = PedParams(args.peds, args.ped_speed, args.ped_policy, ped_seed) if args.peds > 0 else None
        res = run_episode(grid, peds, factory(), Pose2D(*start), Pose2D(*goal), ep_cfg,
                          seeds={"master": cfg.seed, "episode": i, "peds": ped_seed})
        res.params = {"map": Path(args.map).name, "start": list(start), "goal": list(goal),
                      "policy": args.policy, "peds": args.peds, "ped_speed": args.ped_speed,
                      "ped_policy": args.ped_policy}
        with open(rec_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(res.record(), sort_keys=True) + "\n")
        if trace_path is not None:
            with open(trace_path, "a", encoding="utf-8") as fh:
                for row in res.trace:
                    fh.write(json.dumps({"episode": i, **row}, sort_keys=True) + "\n")
        successes += res.success
        collisions += res.collisions
    outputs = [rec_path] + ([trace_path] if trace_path else [])
    inputs = [Path(args.map).with_suffix(".pgm"), Path(args.map).with_suffix(".json")]
    write_manifest(out / f"{Path(args.records).stem}.manifest.json", "run-episode", cfg, vars(args), inputs, outputs)
    rate = successes / args.repeat
    print(f"success rate: {successes}/{args.repeat} ({100 * rate:.1f}%)  collisions: {collisions}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .evaluator import evaluate_extremes, write_ranking

    cfg = _config(args)
    out = _out_dir(args, cfg)
    ranking, detail = evaluate_extremes(_runner(args, cfg), None, _budget(cfg), seed=cfg.seed)
    rank_path, delta_path = out / "ranking.json", out / "deltas.json"
    write_ranking(rank_path, ranking, detail)
    delta_path.write_text(json.dumps(dict(ranking.entries), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    write_manifest(out / "evaluate.manifest.json", "evaluate", cfg, vars(args), outputs=[rank_path, delta_path])
    for name, d in ranking.entries:
        print(f"{name:16s} {d:+.4f}")
    return EXIT_OK


def cmd_rank(args) -> int:
    from .evaluator import evaluate_extremes, rank_from_deltas, write_ranking

    cfg = _config(args)
    out = _out_dir(args, cfg)
    inputs = []
    if args.from_deltas:
        deltas = json.loads(Path(args.from_deltas).read_text(encoding="utf-8"))
        ranking = rank_from_deltas(deltas)
        inputs.append(Path(args.from_deltas))
    else:
        ranking, _ = evaluate_extremes(_runner(args, cfg), None, _budget(cfg), seed=cfg.seed)
    path = out / "ranking.json"
    write_ranking(path, ranking)
    write_manifest(out / "rank.manifest.json", "rank", cfg, vars(args), inputs, [path])
    for i, (name, d) in enumerate(ranking.entries, 1):
        print(f"{i}. {name} ({d:.4f})")
    return EXIT_OK


def cmd_fit(args) -> int:
    from .evaluator import VariableSpec, default_specs, fit_response

    cfg = _config(args)
    out = _out_dir(args, cfg)
    specs = {s.name: s for s in default_specs()}
    names = [args.variable] if args.variable else list(specs)
    outputs = []
    for name in names:
        if name not in specs:
            raise ConfigError(f"unknown variable {name!r}")
        spec: VariableSpec = specs[name]
        resp = fit_response(_runner(args, cfg), spec, cfg.fit_points, _budget(cfg), seed=cfg.seed)
        csv_path, fit_path = out / f"response_{name}.csv", out / f"fit_{name}.json"
        resp.write_csv(csv_path)
        fit_path.write_text(json.dumps({"variable": name, "slope": resp.slope, "intercept": resp.intercept,
                                        "residual": resp.residual}, sort_keys=True, indent=2) + "\n",
                            encoding="utf-8")
        outputs += [csv_path, fit_path]
        print(f"{name}: mean = {resp.slope:+.6f} * level {resp.intercept:+.6f} (residual {resp.residual:.3g})")
    write_manifest(out / "fit.manifest.json", "fit", cfg, vars(args), outputs=outputs)
    return EXIT_OK


def cmd_train(args) -> int:
    from .agentpolicy import PolicyParams, TrainerConfig, train_policy
    from .curriculum import CurriculumScheduler, CurriculumState, HardestSource, init_curriculum
    from .evaluator import DifficultyRanking, rank_from_deltas

    cfg = _config(args)
    out = _out_dir(args, cfg)
    generations = cfg.generations if args.budget is None else args.budget
    tcfg = TrainerConfig(generations=generations, pairs=cfg.pairs, episodes=cfg.train_episodes, sigma=cfg.sigma,
                         learning_rate=cfg.learning_rate, time_limit=cfg.train_time_limit, n_beams=cfg.train_beams)
    inputs = []
    if args.ranking:
        ranking = DifficultyRanking.from_dict(json.loads(Path(args.ranking).read_text(encoding="utf-8")))
        inputs.append(Path(args.ranking))
    else:
        ranking = rank_from_deltas(REFERENCE_DELTAS)
    initial = PolicyParams.load(args.init) if args.init else PolicyParams.zeros()
    policy_path, trace_path = out / "policy.txt", out / "curriculum_trace.jsonl"
    log_path, ckpt_path = out / "train_log.jsonl", out / "checkpoint.json"
    start = 0
    state = init_curriculum(ranking, cfg.levels)
    window: list[float] = []
    if args.resume and ckpt_path.exists():
        ck = json.loads(ckpt_path.read_text(encoding="utf-8"))
        initial = PolicyParams(np.array(ck["theta"]), metadata=ck.get("metadata", {}))
        state = CurriculumState.from_dict(ck["curriculum"])
        window = ck["window"]
        start = ck["next_generation"]
    else:
        for p in (trace_path, log_path, ckpt_path):
            p.unlink(missing_ok=True)
    if args.mode == "curriculum":
        source = CurriculumScheduler(state, cfg.window, cfg.threshold, trace_path)
        source.scores.extend(window)
    else:
        source = HardestSource()

    def checkpoint(gen, params, rec):
        doc = {"next_generation": gen + 1, "theta": params.theta.tolist(), "metadata": params.metadata,
               "curriculum": getattr(source, "state", state).to_dict(),
               "window": list(getattr(source, "scores", []))}
        ckpt_path.write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")

    initial.metadata.update(mode=args.mode, curriculum_trace=trace_path.name)
    params, _ = train_policy(initial, source, tcfg, cfg.seed, log_path, start, checkpoint)
    params.save(policy_path)
    log_path.touch()
    trace_path.touch()
    write_manifest(out / "train.manifest.json", "train", cfg, vars(args), inputs,
                   [policy_path, trace_path, log_path])
    print(f"trained {generations} generations ({args.mode}) -> {policy_path}")
    return EXIT_OK


def _render(grid, points) -> bytes:
    img = np.where(grid.occupied, 0, 255).astype(np.uint8)
    for x, y in points:
        ix, iy = grid.world_to_cell(x, y)
        if grid.in_bounds(ix, iy):
            img[iy, ix] = 128
    img = img[::-1]
    return f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii") + img.tobytes()


def cmd_plot(args) -> int:
    from .evaluator import fit_line
    from .simcore import read_records
    from .worldmodel import read_grid

    cfg = _config(args)
    out = _out_dir(args, cfg)
    inputs, outputs = [], []
    rows = []
    if args.trace:
        rows = read_records(args.trace)
        inputs.append(Path(args.trace))
        path = out / f"{Path(args.trace).stem}_xy.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["episode", "t", "x", "y", "perf"])
            for i, r in enumerate(rows, 1):
                try:
                    w.writerow([r.get("episode", 0), r["t"], r["x"], r["y"], r["perf"]])
                except KeyError as exc:
                    raise ValueError(f"{args.trace}:{i}: record lacks field {exc}") from None
        outputs.append(path)
    for resp in args.response or []:
        inputs.append(Path(resp))
        levels, means = [], []
        with open(resp, encoding="utf-8") as fh:
            for i, r in enumerate(csv.DictReader(fh), 2):
                try:
                    levels.append(float(r["level"]))
                    means.append(float(r["mean"]))
                except (KeyError, TypeError, ValueError):
                    raise ValueError(f"{resp}:{i}: malformed response row") from None
        slope, intercept, resid = fit_line(levels, means)
        path = out / f"{Path(resp).stem}_plot.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["level", "mean", "fitted"])
            for lv, m in zip(levels, means):
                w.writerow([lv, m, slope * lv + intercept])
        coef = out / f"{Path(resp).stem}_line.json"
        coef.write_text(json.dumps({"slope": slope, "intercept": intercept, "residual": resid},
                                   sort_keys=True) + "\n", encoding="utf-8")
        outputs += [path, coef]
    if args.map:
        grid, _ = read_grid(args.map)
        inputs += [Path(args.map).with_suffix(".pgm"), Path(args.map).with_suffix(".json")]
        path = out / f"{Path(args.map).stem}_render.pgm"
        path.write_bytes(_render(grid, [(r["x"], r["y"]) for r in rows]))
        outputs.append(path)
    if not outputs:
        raise ConfigError("plot needs --trace, --response or --map")
    write_manifest(out / "plot.manifest.json", "plot", cfg, vars(args), inputs, outputs)
    for p in outputs:
        print(p)
    return EXIT_OK


# --- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evonav", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat key = value configuration file")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--out", help="output directory")

    def policy_opts(sp, default="scripted"):
        sp.add_argument("--policy", default=default, help="scripted | static | oracle | synthetic | PARAMS_FILE")
        sp.add_argument("--synthetic-variable", default="room_number")
        sp.add_argument("--synthetic-slope", type=float, default=-0.1)
        sp.add_argument("--synthetic-intercept", type=float, default=1.0)
        sp.add_argument("--synthetic-noise", type=float, default=0.0)
        sp.add_argument("--maps", dest="maps_per_extreme", type=int)
        sp.add_argument("--episodes", type=int)
        sp.add_argument("--iterations", type=int)
        sp.add_argument("--time-limit", type=float)

    sp = sub.add_parser("gen-map", help="generate a room/corridor map")
    common(sp)
    sp.add_argument("--rooms", type=int, default=4)
    sp.add_argument("--room-size", type=float, default=0.75)
    sp.add_argument("--corridor", type=float, default=0.75)
    sp.add_argument("--convexity", default="1")
    sp.add_argument("--extent", type=float, default=20.0)
    sp.add_argument("--name", default="map")
    sp.set_defaults(func=cmd_gen_map)

    sp = sub.add_parser("run-episode", help="run scored episodes on a map")
    common(sp)
    sp.add_argument("--map", required=True, help="map stem (without .pgm/.json)")
    sp.add_argument("--policy", default="scripted", help="scripted | static | PARAMS_FILE")
    sp.add_argument("--peds", type=int, default=0)
    sp.add_argument("--ped-speed", type=float, default=1.5)
    sp.add_argument("--ped-policy", type=float, default=0.4)
    sp.add_argument("--repeat", type=int, default=1)
    sp.add_argument("--start")
    sp.add_argument("--goal")
    sp.add_argument("--time-limit", type=float)
    sp.add_argument("--records", default="episodes.jsonl")
    sp.add_argument("--trace")
    sp.set_defaults(func=cmd_run_episode)

    sp = sub.add_parser("evaluate", help="extreme-level deltas and ranking")
    common(sp)
    policy_opts(sp)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("rank", help="rank variables (from a deltas file or by evaluating)")
    common(sp)
    policy_opts(sp)
    sp.add_argument("--from-deltas")
    sp.set_defaults(func=cmd_rank)

    sp = sub.add_parser("fit", help="linear response fits")
    common(sp)
    policy_opts(sp)
    sp.add_argument("--variable")
    sp.add_argument("--points", dest="fit_points", type=int)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("train", help="train the learned policy")
    common(sp)
    sp.add_argument("--budget", type=int, help="generations (overrides config)")
    sp.add_argument("--mode", choices=("curriculum", "fixed"), default="curriculum")
    sp.add_argument("--ranking", help="ranking.json (default: the reference ranking)")
    sp.add_argument("--init", help="initial params file")
    sp.add_argument("--window", type=int)
    sp.add_argument("--resume", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("plot", help="plot-ready CSVs and map renders")
    common(sp)
    sp.add_argument("--trace")
    sp.add_argument("--response", action="append")
    sp.add_argument("--map")
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EvonavError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
