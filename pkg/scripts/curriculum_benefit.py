"""Curriculum vs fixed-hardest training at equal budget, scored on held-out hardest episodes.

    python scripts/curriculum_benefit.py --seeds 10 --generations 20 --out results/benefit.json
"""

import argparse
import dataclasses
import json
import time
from pathlib import Path

from evonav.experiments import BenefitConfig, curriculum_benefit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--generations", type=int, default=20)
    ap.add_argument("--window", type=int, default=8)
    ap.add_argument("--held-out", type=int, default=40)
    ap.add_argument("--out", default="results/benefit.json")
    args = ap.parse_args()

    base = BenefitConfig()
    cfg = BenefitConfig(seeds=args.seeds, window=args.window, held_out=args.held_out,
                        trainer=dataclasses.replace(base.trainer, generations=args.generations))
    t0 = time.time()
    res = curriculum_benefit(cfg, log=lambda s: print(s, flush=True))
    res["seconds"] = time.time() - t0
    print(f"curriculum wins {res['wins']}/{args.seeds} (ties {res['ties']}), sign test p = {res['p_value']:.4f}")
    print(f"median held-out mean_perf: curriculum {res['median_curriculum']:+.4f}  hardest {res['median_hardest']:+.4f}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(res, indent=2) + "\n")
    print(f"{res['seconds']:.0f}s -> {out}")


if __name__ == "__main__":
    main()
