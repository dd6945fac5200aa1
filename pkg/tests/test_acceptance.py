"""End-to-end acceptance checks on the bundled example, one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` (the lines are repeated in the
terminal summary) or directly with ``python3 tests/test_acceptance.py``.
"""

import json
import time

import numpy as np
import pytest

from lpvlab import analysis, cli, freq, sdp, sim
from lpvlab.lpvmodel import AffineLpvSS, Box, eval_matrices

RESULTS = []

REFERENCE_X = [[0.6240, -0.6951], [-0.6951, 3.1187]]


def record(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} | {detail}"
    RESULTS.append(line)
    print(line)
    return ok


def run_cli(tmp_path, *argv):
    out = tmp_path / argv[0]
    t0 = time.perf_counter()
    code = cli.main(list(argv) + ["--out", str(out)])
    elapsed = time.perf_counter() - t0
    return code, json.loads((out / "report.json").read_text()), elapsed


def sign_oracle_negative_definite(q):
    return np.trace(q) < 0 and np.linalg.det(q) > 0


def test_1_certificate_reproduction(tmp_path, capsys):
    xfile = tmp_path / "x.json"
    xfile.write_text(json.dumps({"X": REFERENCE_X}))
    code, rep, elapsed = run_cli(tmp_path, "stability", "--verify-x", str(xfile))
    capsys.readouterr()
    res = rep["result"]
    # second route: hand 2x2 definiteness tests on the same matrices
    X = np.array(REFERENCE_X)
    clp = cli.load_config(cli.example_config_path()).clp
    oracle = X[0, 0] > 0 and np.linalg.det(X) > 0 and all(
        sign_oracle_negative_definite(a.T @ X + X @ a) for a in (eval_matrices(clp, [v])[0] for v in (0.0, 9.0)))
    ok = (code == 0 and res["min_eig_X"] > 0 and all(m < 0 for m in res["vertex_max_eig"]) and oracle
          and elapsed < 1.0)
    record(1, "reference X certifies the vertices", ok,
           f"lambda_min(X)={res['min_eig_X']:.4f}, vertex max eig={[round(m, 4) for m in res['vertex_max_eig']]}, "
           f"oracle={oracle}, {elapsed:.2f}s < 1s")
    assert ok


def test_2_unweighted_gain(tmp_path, capsys):
    code, rep, elapsed = run_cli(tmp_path, "l2gain")
    capsys.readouterr()
    g = rep["result"]["gamma"]
    ok = code == 0 and g is not None and 1.69 <= g <= 1.87 and elapsed < 5.0
    record(2, "unweighted L2 gain in [1.69, 1.87]", ok, f"gamma={g:.4f} (reference 1.78), {elapsed:.2f}s < 5s")
    assert ok


def test_3_weighted_gain(tmp_path, capsys):
    code, rep, elapsed = run_cli(tmp_path, "l2gain", "--weighted")
    capsys.readouterr()
    g = rep["result"]["gamma"]
    ok = code == 0 and g is not None and 0.88 <= g <= 1.08 and elapsed < 10.0
    record(3, "weighted L2 gain in [0.88, 1.08]", ok, f"gamma={g:.4f} (reference 0.98), {elapsed:.2f}s < 10s")
    assert ok


def test_4_time_responses(tmp_path, capsys):
    code, rep, elapsed = run_cli(tmp_path, "simulate", "--reference", "0.5", "--disturbances", "0,-7,-8")
    capsys.readouterr()
    runs = {r["input"]["d"]: r for r in rep["result"]["runs"]}
    r0, r7, r8 = runs[0.0]["verdict"], runs[-7.0]["verdict"], runs[-8.0]["verdict"]
    conv = r0["kind"] == "Converged" and r0["steady_state_error"] < 1e-3
    cyc = all(v["kind"] == "LimitCycle" and v["peak_to_peak"] >= 0.5 for v in (r7, r8))
    inside = all(r["scheduling_in_P"] for r in runs.values())
    ok = code == 0 and conv and cyc and inside and elapsed < 5.0
    record(4, "d=0 converges, d=-7/-8 settle on limit cycles of peak-to-peak >= 0.5", ok,
           f"d=0 {r0['kind']} |e|={r0['steady_state_error']:.1e}; d=-7 {r7['kind']} ptp={r7['peak_to_peak']:.3f}; "
           f"d=-8 {r8['kind']} ptp={r8['peak_to_peak']:.3f}; mu in P: {inside}; {elapsed:.2f}s < 5s")
    assert ok


def test_5_alpha_sweep(tmp_path, capsys):
    code, rep, elapsed = run_cli(tmp_path, "sets")
    capsys.readouterr()
    rows = {round(r["alpha"], 2): r for r in rep["result"]["rows"]}
    low = all(rows[a]["R_subset_of_S_hat"] for a in (0.1, 0.2, 0.3, 0.4))
    high = all(not rows[a]["R_subset_of_S_hat"] for a in (0.6, 0.7, 0.8, 0.9, 1.0))
    ok = code == 0 and low and high and elapsed < 120.0
    flags = "".join("T" if rows[a]["R_subset_of_S_hat"] else "F" for a in sorted(rows))
    record(5, "R inside S_hat for alpha <= 0.4, not for alpha >= 0.6", ok,
           f"subset flags alpha=0.1..1.0: {flags}, {elapsed:.1f}s < 120s")
    assert ok


def test_6_frozen_dc(tmp_path, capsys):
    t0 = time.perf_counter()
    clp = cli.load_config(cli.example_config_path()).clp
    worst = -np.inf
    oracle = 0.0
    for rho in (0.0, 4.5, 9.0):
        sys_ = freq.freeze(clp, [rho])
        for ch in ((0, 0), (1, 0)):
            worst = max(worst, freq.magnitude_response(sys_, ch, [1e-6])[0])
            # second route: the DC gain D - C A^-1 B from a plain linear solve
            a, b, c, d = eval_matrices(clp, [rho])
            oracle = max(oracle, abs(d[ch[1], ch[0]] - c[ch[1]] @ np.linalg.solve(a, b[:, ch[0]])))
    elapsed = time.perf_counter() - t0
    ok = worst <= -60.0 and oracle < 1e-4 and elapsed < 1.0
    record(6, "frozen S and PS below -60 dB at 1e-6 rad/s", ok,
           f"worst={worst:.1f} dB, |DC| oracle max={oracle:.1e}, {elapsed:.2f}s < 1s")
    assert ok


def test_7_property_suites():
    cfg = cli.load_config(cli.example_config_path())
    nl, clp = cfg.nl, cfg.clp
    X = np.array(REFERENCE_X)
    rng = np.random.default_rng(2024)
    checks = {}

    # derivative formula against the vector field
    xi = rng.uniform(-3, 3, size=(10_000, 2))
    W = np.column_stack([rng.uniform(-2, 2, 100), rng.uniform(-8, 8, 100)])
    xb = analysis.equilibria(W, nl, Box.from_intervals(cfg.analysis["state_box"]))[0]
    err = 0.0
    for k in range(100):
        sl = slice(100 * k, 100 * k + 100)
        got = analysis.vdot(xi[sl], xb[k], W[k], X, nl)
        want = 2.0 * np.einsum("ci,ij,cj->c", xi[sl] - xb[k], X, nl.field(xi[sl], np.broadcast_to(W[k], (100, 2))))
        err = max(err, np.max(np.abs(got - want) / (1.0 + np.abs(want))))
    checks["vdot formula"] = (err <= 1e-10, f"{err:.1e}")

    # derivative against central differences along a trajectory
    w = np.array([0.5, -3.0])
    xbar = analysis.equilibrium(w, nl, Box.from_intervals(cfg.analysis["state_box"])).xi_bar
    traj = sim.integrate(nl, xbar + [1.0, -0.5], w, horizon=2.0, opts=sim.SimOptions(dt=1e-4, atol=1e-12, rtol=1e-12))
    V = analysis.QuadLyapunov(X).value(traj.states, xbar)
    fd = (V[2:] - V[:-2]) / 2e-4
    vd = analysis.vdot(traj.states[1:-1], xbar, w, X, nl)
    big = np.abs(vd) > 1e-3
    rel = float(np.max(np.abs(fd[big] - vd[big]) / np.abs(vd[big])))
    checks["finite differences"] = (rel < 1e-4, f"{rel:.1e}")

    # global maximum bound on 1000 scheduling slices
    worst = -np.inf
    for _ in range(1000):
        k = rng.integers(100)
        x = rng.uniform(-3, 3)
        top = analysis.vdot_max(np.array([x, 0.0]), xb[k], W[k], X, nl)
        pts = np.column_stack([np.full(50, x), rng.uniform(-20, 20, 50)])
        worst = max(worst, np.max(analysis.vdot(pts, xb[k], W[k], X, nl)) - top)
    checks["maximum bound"] = (worst <= 1e-9, f"max excess {worst:.1e}")

    # analytic SDPs
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    probs = [(sdp.LmiProblem(1, [1.0], [sdp.LmiBlock(-swap, (np.eye(2),))], 0.0), 1.0),
             (sdp.LmiProblem(2, [1.0, 1.0], [sdp.LmiBlock(np.diag([-1.0, 2.0, 3.0]),
                                                          (np.diag([1.0, 0, -1]), np.diag([0, 1.0, -1])))], 0.0), -1.0)]
    sdp_err = max(abs(sdp.solve(p).objective_value - v) for p, v in probs)
    checks["analytic SDPs"] = (sdp_err <= 1e-6, f"{sdp_err:.1e}")

    # affinity in the scheduling variable
    aff = 0.0
    for _ in range(200):
        r1, r2, lam = rng.uniform(0, 9), rng.uniform(0, 9), rng.uniform()
        mix = eval_matrices(clp, [lam * r1 + (1 - lam) * r2])
        for m, e1, e2 in zip(mix, eval_matrices(clp, [r1]), eval_matrices(clp, [r2])):
            aff = max(aff, np.max(np.abs(m - (lam * e1 + (1 - lam) * e2))))
    checks["affinity"] = (aff <= 1e-12, f"{aff:.1e}")

    ok = all(v[0] for v in checks.values())
    record(7, "property suites", ok, "; ".join(f"{k} {v[1]}" for k, v in checks.items()))
    assert ok


def test_8_negative_control():
    cfg = cli.load_config(cli.example_config_path())
    nl = cfg.nl
    X = np.array(REFERENCE_X)
    grid = analysis.GridSpec(Box.from_intervals(cfg.analysis["state_box"]), cfg.analysis["state_cells"])
    pts = grid.centers().reshape(-1, 2)
    pts = pts[np.linalg.norm(pts, axis=1) > 1e-9]
    origin_max = float(np.max(analysis.vdot(pts, np.zeros(2), np.zeros(2), X, nl)))
    w = np.array([0.5, -8.0])
    xbar = analysis.equilibrium(w, nl, grid.box).xi_bar
    increasing = int(np.sum(analysis.vdot(pts, xbar, w, X, nl) > 0))
    ok = origin_max < 0 and increasing > 0
    record(8, "origin decreases everywhere, w=(0.5,-8) has increasing cells", ok,
           f"origin max vdot={origin_max:.3e}, cells with vdot>0 at w=(0.5,-8): {increasing}")
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
