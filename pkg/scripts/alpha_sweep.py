"""Decrease sets, equilibria and simulated reachable cells for alpha = 0.1 ... 1.0."""

import argparse

from lpvlab import cli

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/sets")
    args = ap.parse_args()
    raise SystemExit(cli.main(["sets", "--out", args.out]))
