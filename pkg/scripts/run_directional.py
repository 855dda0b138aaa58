"""Stage-II adapted ranker vs. direct ranking over several seeds.

    python scripts/run_directional.py --seeds 0 1 2 3 4 --out results/directional.csv
"""

import argparse
import csv
import sys

from ffdr.config import load_config
from ffdr.experiments import directional


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="TOML config (defaults: textrank + random, 200 docs, 20 topics)")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--out", help="CSV with one row per seed")
    args = ap.parse_args()

    outcomes = directional(load_config(args.config), args.seeds)
    rows = [{"seed": o.seed, **{m: f"{v:.6f}" for m, v in o.means.items()}, "seconds": f"{o.seconds:.1f}"}
            for o in outcomes]
    writer = csv.DictWriter(open(args.out, "w", newline="") if args.out else sys.stdout,
                            fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    wins = sum(o.adapted_wins for o in outcomes)
    print(f"adapted >= direct in {wins}/{len(outcomes)} seeds", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
