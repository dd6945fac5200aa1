"""Frozen-scheduling magnitude responses of S and PS with the inverse weights."""

import argparse

from lpvlab import cli

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/bode")
    args = ap.parse_args()
    raise SystemExit(cli.main(["bode", "--out", args.out]))
