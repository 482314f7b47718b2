"""Precision x G characterization sweep with the bundled error model.

    python3 scripts/run_sweep.py --out results/sweep.csv --n-seeds 20
"""

import argparse
import sys

from gavsim import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="results/sweep.csv")
    ap.add_argument("--n-seeds", default="20")
    ap.add_argument("--kind", default="char", choices=["char", "random", "relu"])
    ap.add_argument("--workers", default="4")
    args = ap.parse_args()
    sys.exit(cli.main(["sweep", "--n-seeds", args.n_seeds, "--kind", args.kind, "--workers", args.workers,
                       "--out", args.out]))


if __name__ == "__main__":
    main()
