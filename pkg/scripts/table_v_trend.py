"""Success rate of the scripted policy over the 16 static maps (4 factors x 4 settings).

    python scripts/table_v_trend.py --episodes 50 --out results/table_v.json
"""

import argparse
import json
import time
from pathlib import Path

from evonav.experiments import TABLE_V_GRID, table_v_trend


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--episodes", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/table_v.json")
    args = ap.parse_args()

    t0 = time.time()
    res = table_v_trend(args.episodes, args.seed)
    for name, rows in TABLE_V_GRID.items():
        print(f"{name}: spearman {res['spearman'][name]:+.2f}  spread {res['spread'][name]:.2f}")
        for row, rate in zip(rows, res["rates"][name]):
            print(f"  rooms={row[0]} size={row[1]} corridor={row[2]} convexity={row[3]}  success {rate:.2f}")
    res["seconds"] = time.time() - t0
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(res, indent=2) + "\n")
    print(f"{res['seconds']:.0f}s -> {out}")


if __name__ == "__main__":
    main()
