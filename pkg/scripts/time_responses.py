"""Closed-loop responses to r = 0.5 under constant disturbances d = 0, -1, ..., -8."""

import argparse

from lpvlab import cli

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/simulate")
    args = ap.parse_args()
    raise SystemExit(cli.main(["simulate", "--reference", "0.5", "--disturbances", "0,-1,-2,-3,-4,-5,-6,-7,-8",
                               "--out", args.out]))
