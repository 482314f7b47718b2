"""End-to-end energy/accuracy trade-off on the bundled desk CNN.

Profiles every layer's output MSE against G, allocates G per layer for a
range of budgets and evaluates each plan over several sampling seeds.

    python3 scripts/run_desk_tradeoff.py --out-dir results/desk
"""

import argparse
import sys
from pathlib import Path

from gavsim import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out-dir", type=Path, default=Path("results/desk"))
    ap.add_argument("--n-rep", default="5")
    ap.add_argument("--g-targets", default="4,4.5,5,5.5,6")
    ap.add_argument("--seeds", default="0-4")
    args = ap.parse_args()
    d = args.out_dir
    steps = [
        ["profile", "--n-rep", args.n_rep, "--out", d / "profiles.json"],
        ["infer", "--profiles", d / "profiles.json", "--g-targets", args.g_targets, "--seeds", args.seeds,
         "--out", d / "tradeoff.csv"],
        ["report", "--inputs", d / "tradeoff.csv", "--out", d / "pareto.csv"],
    ]
    for step in steps:
        code = cli.main([str(s) for s in step])
        if code:
            sys.exit(code)
    print((d / "pareto.csv").read_text(), end="")


if __name__ == "__main__":
    main()
