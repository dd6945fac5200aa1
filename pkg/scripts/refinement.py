"""Repeat the alpha sweep with every grid doubled and compare the subset threshold.

The threshold is the largest alpha below which every row has R inside S_hat.
Doubling the state cells and the input grids should move it by at most one
alpha step.
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from lpvlab import analysis, cli
from lpvlab.lpvmodel import Box


def threshold(rows):
    best = 0.0
    for r in sorted(rows, key=lambda r: r.alpha):
        if not r.R_subset_of_S_hat:
            break
        best = r.alpha
    return best


def sweep(cfg, X, scale):
    an = cfg.analysis
    grid = analysis.GridSpec(Box.from_intervals(an["state_box"]), [scale * c for c in an["state_cells"]])
    w_counts = [scale * (c - 1) + 1 for c in an["w_points"]]
    r_counts = [scale * (c - 1) + 1 for c in an["reach_points"]]
    t0 = time.perf_counter()
    rows = analysis.alpha_sweep(an["alphas"], Box.from_intervals(an["w_box"]), grid, X, cfg.nl, w_counts, r_counts,
                                an["margin"], cfg.sim_options())
    return rows, time.perf_counter() - t0


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/refinement")
    args = ap.parse_args()
    cfg = cli.load_config(cli.example_config_path())
    X = analysis.l2gain(cfg.clp).lyapunov.X
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {}
    for scale in (1, 2):
        rows, secs = sweep(cfg, X, scale)
        summary[f"x{scale}"] = {"threshold": threshold(rows), "seconds": round(secs, 1),
                                "rows": [r.to_dict() for r in rows]}
        print(f"grids x{scale}: threshold alpha = {threshold(rows):.1f} ({secs:.0f} s)", flush=True)
        for r in rows:
            print(f"  alpha={r.alpha:.1f} subset={r.R_subset_of_S_hat!s:5} R-S_hat={r.R_minus_S_hat_cells:5d} "
                  f"violations={r.violation_cells}")
    step = float(np.min(np.diff(sorted(cfg.analysis["alphas"]))))
    shift = abs(summary["x2"]["threshold"] - summary["x1"]["threshold"])
    summary["threshold_shift"] = shift
    summary["within_one_step"] = bool(shift <= step + 1e-12)
    (out / "refinement.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"threshold shift {shift:.1f} (one step is {step:.1f}): {'ok' if summary['within_one_step'] else 'NOT ok'}")
