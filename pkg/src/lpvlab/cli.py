"""Command-line front end: ``lpvlab <stability|l2gain|simulate|sets|bode> --config FILE``.

Every command writes ``report.json`` into the output directory and echoes
it on stdout. Exit codes: 0 success, 1 usage or config error, 2 negative
analysis result (infeasible), 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import analysis, freq, sim, svg
from .lpvmodel import (AffineLpvSS, Box, ModelError, NlClosedLoop, OutOfSetError, SchedulingMap, TransferFunction,
                       augment_weights, interconnect, vertices)
from .sdp import Status

__all__ = ["main", "load_config", "ExperimentConfig", "ConfigError", "REPORT_SCHEMA", "EXIT"]

log = logging.getLogger("lpvlab")

EXIT = {"ok": 0, "usage": 1, "negative": 2, "numerical": 3}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["command", "config_hash", "wall_time_s", "status", "exit_code", "result", "files"],
    "additionalProperties": False,
    "properties": {
        "command": {"enum": ["stability", "l2gain", "simulate", "sets", "bode"]},
        "config_hash": {"type": "string", "pattern": "^[0-9a-f]{64}$"},
        "wall_time_s": {"type": "number", "minimum": 0},
        "status": {"type": "string"},
        "exit_code": {"enum": [0, 2, 3]},
        "result": {"type": "object"},
        "files": {"type": "array", "items": {"type": "string"}},
    },
}

BODE_HEADER = ["omega_rad_s", "rho", "channel", "magnitude_db"]
INVERSE_WEIGHT_HEADER = ["omega_rad_s", "channel", "magnitude_db"]
SWEEP_HEADER = ["alpha", "S_hat_cells", "Xi_bar_cells", "R_cells", "R_subset_of_S_hat", "violation_cells",
                "R_minus_S_hat_cells"]


class ConfigError(ValueError):
    """The configuration file is missing, malformed or describes an invalid model."""


@dataclass
class ExperimentConfig:
    raw: dict
    clp: AffineLpvSS
    nl: NlClosedLoop
    input_weights: list | None
    output_weights: list | None
    analysis: dict
    sim: dict
    bode: dict

    def weighted(self):
        if self.input_weights is None:
            raise ConfigError("config has no weights section")
        return augment_weights(self.clp, self.input_weights, self.output_weights)

    def state_grid(self):
        return analysis.GridSpec(Box.from_intervals(self.analysis["state_box"]), self.analysis["state_cells"])

    def sim_options(self):
        s = self.sim
        return sim.SimOptions(atol=s["atol"], rtol=s["rtol"], dt=s["dt"], horizon=s["horizon"])


_ANALYSIS_DEFAULTS = {
    "alphas": [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0], "margin": 0.0, "strictness": 1e-6,
    "certificate": "l2gain",
}
_SIM_DEFAULTS = {"horizon": 100.0, "atol": 1e-9, "rtol": 1e-7, "dt": 0.01, "reference": 0.0, "disturbances": [0.0]}
_BODE_DEFAULTS = {"rho": None, "omega_min": 1e-4, "omega_max": 1e3, "omega_points": 400, "channels": None}


def _model_block(d, P, what):
    try:
        return AffineLpvSS(d["A"], d["B"], d["C"], d["D"], P, tuple(d.get("states", ())),
                           tuple(d.get("inputs", ())), tuple(d.get("outputs", ())))
    except KeyError as exc:
        raise ConfigError(f"{what} is missing matrix {exc.args[0]}") from None


def _tf(d, what):
    if isinstance(d, (int, float)):
        return TransferFunction.gain(d)
    try:
        return TransferFunction(tuple(d["num"]), tuple(d["den"]))
    except (KeyError, TypeError):
        raise ConfigError(f"weight {what!r} needs 'num' and 'den' lists") from None


def load_config(path) -> ExperimentConfig:
    """Read and validate a JSON experiment description."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return config_from_dict(raw)


def config_from_dict(raw) -> ExperimentConfig:
    if not isinstance(raw, dict) or "model" not in raw:
        raise ConfigError("config needs a 'model' section")
    m = raw["model"]
    try:
        P = Box.from_intervals(m["scheduling_box"])
        if "closed_loop" in m:
            clp = _model_block(m["closed_loop"], P, "closed_loop")
        else:
            plant = _model_block(m["plant"], P, "plant")
            ctrl = _model_block(m["controller"], P, "controller")
            clp = interconnect(plant, ctrl, m["wiring"], m["inputs"], m["outputs"])
        sm = m["scheduling_map"]
        mu = SchedulingMap(tuple(tuple((t[0], tuple(t[1])) for t in comp) for comp in sm["terms"]),
                           tuple(sm["indices"]), sm.get("source", "state"))
        nl = NlClosedLoop(clp, mu)
    except KeyError as exc:
        raise ConfigError(f"model section is missing {exc.args[0]!r}") from None
    except (ModelError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid model: {exc}") from None

    iw = ow = None
    if "weights" in raw:
        w = raw["weights"]
        try:
            iw = [_tf(w["inputs"][name], name) for name in clp.inputs]
            ow = [_tf(w["outputs"][name], name) for name in clp.outputs]
        except KeyError as exc:
            raise ConfigError(f"weights section has no entry for channel {exc.args[0]!r}") from None
        except ModelError as exc:
            raise ConfigError(str(exc)) from None

    an = {**_ANALYSIS_DEFAULTS, **raw.get("analysis", {})}
    n = clp.n_x
    an.setdefault("state_box", [[-1.0, 1.0]] * n)
    an.setdefault("state_cells", [121] * n)
    an.setdefault("w_box", [[-1.0, 1.0]] * clp.n_w)
    an.setdefault("w_points", [21] * clp.n_w)
    an.setdefault("reach_points", [5] * clp.n_w)
    if len(an["state_box"]) != n or len(an["state_cells"]) != n:
        raise ConfigError(f"analysis.state_box and state_cells need {n} entries")
    if len(an["w_box"]) != clp.n_w or len(an["w_points"]) != clp.n_w or len(an["reach_points"]) != clp.n_w:
        raise ConfigError(f"analysis.w_box, w_points and reach_points need {clp.n_w} entries")
    if any(not 0.0 <= float(a) <= 1.0 for a in an["alphas"]):
        raise ConfigError("analysis.alphas must lie in [0, 1]")

    sm_ = {**_SIM_DEFAULTS, **raw.get("sim", {})}
    sm_.setdefault("reference_input", clp.inputs[0])
    sm_.setdefault("disturbance_input", clp.inputs[-1])
    for key in ("reference_input", "disturbance_input"):
        if sm_[key] not in clp.inputs:
            raise ConfigError(f"sim.{key} {sm_[key]!r} is not a closed-loop input")
    bd = {**_BODE_DEFAULTS, **raw.get("bode", {})}
    if bd["rho"] is None:
        bd["rho"] = [list(v) for v in (P.lower, P.upper)] if P.dim > 1 else [float(P.lower[0]), float(P.upper[0])]
    if bd["channels"] is None:
        bd["channels"] = [{"name": f"{i}->{o}", "input": i, "output": o} for i in clp.inputs for o in clp.outputs]
    for ch in bd["channels"]:
        if ch["input"] not in clp.inputs or ch["output"] not in clp.outputs:
            raise ConfigError(f"bode channel {ch} names an unknown signal")
    try:
        cfg = ExperimentConfig(raw, clp, nl, iw, ow, an, sm_, bd)
        cfg.state_grid()
        cfg.sim_options()
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid analysis or sim settings: {exc}") from None
    return cfg


def example_config_path():
    return resources.files("lpvlab") / "data" / "example_paper.json"


# -- helpers --------------------------------------------------------------------------


def _hash(raw, command, options):
    blob = json.dumps({"config": raw, "command": command, "options": options}, sort_keys=True,
                      separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _f(v):
    return None if v is None or not np.isfinite(v) else float(v)


def _mat(m):
    return [[float(v) for v in row] for row in np.asarray(m)]


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        wr.writerows(rows)


def _exit_for(status: Status):
    return {Status.OPTIMAL: 0, Status.FEASIBLE: 0, Status.INFEASIBLE: 2}.get(status, 3)


# -- commands -------------------------------------------------------------------------


def cmd_stability(cfg: ExperimentConfig, args, out: Path):
    if args.verify_x:
        try:
            with open(args.verify_x) as fh:
                data = json.load(fh)
            X = np.asarray(data["X"] if isinstance(data, dict) else data, dtype=float)
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot read matrix from {args.verify_x}: {exc}") from None
        if X.shape != (cfg.clp.n_x, cfg.clp.n_x) or not np.allclose(X, X.T):
            raise ConfigError(f"--verify-x needs a symmetric {cfg.clp.n_x}x{cfg.clp.n_x} matrix")
        lo, margins = analysis.lyapunov_margins(cfg.clp, X)
        ok = lo > 0 and all(mg < 0 for mg in margins)
        result = {"mode": "verify", "X": _mat(X), "min_eig_X": lo, "vertex_max_eig": margins,
                  "vertices": [v.tolist() for v in _vertices(cfg)], "certified": ok}
        return ("Certified" if ok else "NotCertified"), (0 if ok else 2), result, []
    res = analysis.quadratic_stability(cfg.clp, cfg.analysis["strictness"])
    result = {"mode": "search", "solver_status": res.status.value, "evidence_margin": _f(res.evidence),
              "vertices": [v.tolist() for v in _vertices(cfg)]}
    if res.feasible:
        result.update({"X": _mat(res.lyapunov.X), "min_eig_X": res.min_eig_X, "vertex_max_eig": res.vertex_margins})
    return res.status.value, _exit_for(res.status), result, []


def _vertices(cfg):
    return vertices(cfg.clp.P)


def cmd_l2gain(cfg: ExperimentConfig, args, out: Path):
    model = cfg.weighted() if args.weighted else cfg.clp
    res = analysis.l2gain(model, cfg.analysis["strictness"])
    result = {"weighted": bool(args.weighted), "solver_status": res.status.value, "gamma": _f(res.gamma),
              "relative_gap": _f(res.gap), "n_states": model.n_x, "states": list(model.states)}
    if res.lyapunov is not None:
        result.update({"X": _mat(res.lyapunov.X), "vertex_max_eig": res.vertex_margins,
                       "solver_trace": [float(v) for v in res.solution.trace]})
    return res.status.value, _exit_for(res.status), result, []


def cmd_simulate(cfg: ExperimentConfig, args, out: Path):
    s = cfg.sim
    ref = s["reference"] if args.reference is None else args.reference
    dists = s["disturbances"] if args.disturbances is None else args.disturbances
    opts = cfg.sim_options()
    clp = cfg.clp
    ri, di = clp.inputs.index(s["reference_input"]), clp.inputs.index(s["disturbance_input"])
    files, runs, series = [], [], []
    for k, d in enumerate(dists):
        w = np.zeros(clp.n_w)
        w[ri] = ref
        w[di] = d
        traj = sim.integrate(cfg.nl, np.zeros(clp.n_x), w, opts.horizon, opts)
        verdict = sim.classify(traj, opts, clp.P)
        inside, t_viol = sim.scheduling_in_set(traj, clp.P)
        name = f"trajectory_{k:02d}.csv"
        traj.write_csv(out / name)
        files.append(name)
        runs.append({"file": name, "input": {n: float(v) for n, v in zip(clp.inputs, w)},
                     "verdict": verdict.to_dict(), "termination": traj.termination,
                     "scheduling_in_P": bool(inside), "first_violation_time": _f(t_viol)})
        # the first plant output doubles as the plotted response
        series.append({"x": traj.times, "y": traj.states[:, 0], "label": f"d={d:g}"})
    (out / "verdicts.json").write_text(json.dumps(runs, indent=2) + "\n")
    svg.line_chart(out / "simulate.svg", series, title=f"responses, reference {ref:g}", xlabel="t [s]",
                   ylabel=clp.states[0])
    files += ["verdicts.json", "simulate.svg"]
    kinds = sorted({r["verdict"]["kind"] for r in runs})
    return "Completed", 0, {"reference": float(ref), "runs": runs, "verdict_kinds": kinds}, files


def _certificate(cfg, args):
    cert = cfg.analysis["certificate"]
    if isinstance(cert, dict):
        return np.asarray(cert["X"], dtype=float), "config", Status.FEASIBLE
    if cert == "stability":
        res = analysis.quadratic_stability(cfg.clp, cfg.analysis["strictness"])
        return (res.lyapunov.X if res.feasible else None), "stability", res.status
    if cert == "l2gain":
        res = analysis.l2gain(cfg.clp, cfg.analysis["strictness"])
        return (res.lyapunov.X if res.lyapunov is not None else None), "l2gain", res.status
    raise ConfigError(f"unknown certificate source {cert!r}")


def cmd_sets(cfg: ExperimentConfig, args, out: Path):
    if cfg.clp.n_x != 2:
        raise ConfigError("sets needs a two-state closed loop")
    X, source, status = _certificate(cfg, args)
    if X is None:
        return status.value, _exit_for(status) or 2, {"certificate_source": source}, []
    an = cfg.analysis
    alphas = args.alphas if args.alphas is not None else an["alphas"]
    margin = an["margin"] if args.margin is None else args.margin
    grid = cfg.state_grid()
    rows = analysis.alpha_sweep(alphas, Box.from_intervals(an["w_box"]), grid, X, cfg.nl,
                                tuple(an["w_points"]), tuple(an["reach_points"]), margin, cfg.sim_options())
    files = ["alpha_sweep.csv"]
    _write_csv(out / "alpha_sweep.csv", SWEEP_HEADER,
               [[repr(r.alpha), r.S_hat_cells, r.Xi_bar_cells, r.R_cells, int(r.R_subset_of_S_hat),
                 r.violation_cells, r.R_minus_S_hat_cells] for r in rows])
    centres = grid.centers().reshape(-1, 2)
    for r in rows:
        tag = f"{r.alpha:.2f}"
        name = f"sets_alpha_{tag}.csv"
        masks = [r.masks[k].mask.reshape(-1).astype(int) for k in ("S_hat", "Xi_bar", "R")]
        _write_csv(out / name, ["xi_1", "xi_2", "S_hat", "Xi_bar", "R"],
                   [[repr(float(c[0])), repr(float(c[1])), a, b, c_] for c, a, b, c_ in zip(centres, *masks)])
        fig = f"sets_alpha_{tag}.svg"
        outside = r.masks["R"].mask & ~r.masks["S_hat"].mask
        svg.mask_heatmap(out / fig, grid.box, [
            (r.masks["S_hat"].mask, "#cfe0f5", "S_hat"),
            (r.masks["R"].mask, "#f0b37a", "R"),
            (outside, "#b8322a", "R outside S_hat"),
            (r.masks["Xi_bar"].mask, "#1f4e9c", "equilibria"),
        ], title=f"alpha = {r.alpha:g}")
        files += [name, fig]
    table = [r.to_dict() for r in rows]
    subset = [r.alpha for r in rows if r.R_subset_of_S_hat]
    result = {"certificate_source": source, "X": _mat(X), "margin": float(margin), "rows": table,
              "largest_alpha_with_subset": max(subset) if subset else None}
    return "Completed", 0, result, files


def cmd_bode(cfg: ExperimentConfig, args, out: Path):
    b = cfg.bode
    omegas = freq.default_omegas(int(b["omega_points"]), float(b["omega_min"]), float(b["omega_max"]))
    clp = cfg.clp
    rows, series, dc = [], [], []
    for ch in b["channels"]:
        idx = (clp.inputs.index(ch["input"]), clp.outputs.index(ch["output"]))
        for rho in b["rho"]:
            lti = freq.freeze(clp, rho)
            mag = freq.magnitude_response(lti, idx, omegas)
            rho_txt = repr(float(rho)) if np.ndim(rho) == 0 else json.dumps([float(r) for r in rho])
            rows += [[repr(float(w)), rho_txt, ch["name"], repr(float(m))] for w, m in zip(omegas, mag)]
            dc.append({"channel": ch["name"], "rho": rho, "dc_gain": _f(freq.dc_gain(lti, idx))})
            series.append({"x": omegas, "y": mag, "label": f"{ch['name']} rho={rho}", "channel": ch["name"]})
    _write_csv(out / "bode.csv", BODE_HEADER, rows)
    files = ["bode.csv"]
    inv_rows = []
    if cfg.input_weights is not None:
        for ch in b["channels"]:
            wi = cfg.input_weights[clp.inputs.index(ch["input"])]
            wo = cfg.output_weights[clp.outputs.index(ch["output"])]
            inv = freq.inverse_weight_db(omegas, wo, wi)
            inv_rows += [[repr(float(w)), ch["name"], repr(float(m))] for w, m in zip(omegas, inv)]
            series.append({"x": omegas, "y": inv, "label": f"{ch['name']} inverse weight", "dashed": True,
                           "color": "#d9731a", "channel": ch["name"]})
        _write_csv(out / "inverse_weights.csv", INVERSE_WEIGHT_HEADER, inv_rows)
        files.append("inverse_weights.csv")
    for ch in b["channels"]:
        name = f"bode_{_slug(ch['name'])}.svg"
        own = [{k: v for k, v in s.items() if k != "channel"} for s in series if s["channel"] == ch["name"]]
        for s in own:
            if not s.get("dashed"):
                s["label"] = s["label"].split(" ", 1)[1]
        svg.line_chart(out / name, own, title=f"{ch['name']} magnitude (frozen rho)", xlabel="omega [rad/s]",
                       ylabel="magnitude [dB]", xlog=True)
        files.append(name)
    return "Completed", 0, {"channels": [c["name"] for c in b["channels"]], "dc_gains": dc,
                            "n_omegas": int(omegas.size)}, files


def _slug(s):
    return "".join(ch if ch.isalnum() else "_" for ch in s)


COMMANDS = {"stability": cmd_stability, "l2gain": cmd_l2gain, "simulate": cmd_simulate, "sets": cmd_sets,
            "bode": cmd_bode}


# -- entry point ----------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT["usage"], f"{self.prog}: error: {message}\n")


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser():
    p = _Parser(prog="lpvlab", description="Lyapunov and L2-gain analysis of LPV closed loops.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="experiment JSON (default: the bundled example)")
    p.add_argument("--out", default="out", help="output directory (default: ./out)")
    p.add_argument("--weighted", action="store_true", help="l2gain: attach the configured weights")
    p.add_argument("--verify-x", help="stability: check this matrix instead of searching")
    p.add_argument("--margin", type=float, help="sets: require vdot < -margin")
    p.add_argument("--alphas", type=_float_list, help="sets: comma-separated scale factors")
    p.add_argument("--reference", type=float, help="simulate: constant reference value")
    p.add_argument("--disturbances", type=_float_list, help="simulate: comma-separated constant disturbances")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        if args.margin is not None and args.margin < 0:
            raise ConfigError("--margin must be nonnegative")
        if args.alphas is not None and any(not 0.0 <= a <= 1.0 for a in args.alphas):
            raise ConfigError("--alphas must lie in [0, 1]")
        path = args.config or example_config_path()
        cfg = load_config(path)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        options = {k: getattr(args, k) for k in ("weighted", "verify_x", "margin", "alphas", "reference",
                                                  "disturbances")}
        if args.verify_x and Path(args.verify_x).is_file():
            # hash the matrix, not its path
            options["verify_x"] = hashlib.sha256(Path(args.verify_x).read_bytes()).hexdigest()
        status, code, result, files = COMMANDS[args.command](cfg, args, out)
    except (ConfigError, OutOfSetError) as exc:
        print(f"lpvlab: error: {exc}", file=sys.stderr)
        return EXIT["usage"]
    report = {
        "command": args.command,
        "config_hash": _hash(cfg.raw, args.command, options),
        "wall_time_s": round(time.perf_counter() - t0, 6),
        "status": status,
        "exit_code": code,
        "result": result,
        "files": files + ["report.json"],
    }
    text = json.dumps(report, indent=2, allow_nan=False)
    (out / "report.json").write_text(text + "\n")
    print(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
