"""Simulation of the nonlinear closed loop and classification of the responses.

The integrator is the Dormand-Prince 5(4) pair with its fourth-order
continuous extension, vectorized over a batch of independent trajectories
that each keep their own step size. Output is sampled on a uniform grid.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field

import numpy as np

from .lpvmodel import Box, NlClosedLoop

__all__ = [
    "SimOptions",
    "InputSignal",
    "Trajectory",
    "Verdict",
    "TrajectoryVerdict",
    "integrate",
    "integrate_batch",
    "classify",
    "scheduling_in_set",
]

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# dense output: y(t + theta h) = y + h * K^T (P @ [theta, theta^2, theta^3, theta^4])
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

RUNNING, FINISHED, ESCAPED, UNDERFLOW, NONFINITE, SETTLED = range(6)


@dataclass(frozen=True)
class SimOptions:
    atol: float = 1e-9
    rtol: float = 1e-7
    dt: float = 0.01  # output spacing
    horizon: float = 100.0
    escape_bound: float = 1e3
    max_steps: int = 2_000_000
    tail_fraction: float = 0.2
    converged_ptp: float = 1e-3
    spacing_rsd: float = 0.05

    def __post_init__(self):
        if self.atol <= 0 or self.rtol <= 0 or self.dt <= 0 or self.horizon <= 0:
            raise ValueError("tolerances, spacing and horizon must be positive")
        if not 0 < self.tail_fraction <= 0.5:
            raise ValueError("tail_fraction must lie in (0, 0.5]")


@dataclass(frozen=True)
class InputSignal:
    """Piecewise-constant input: ``values[k]`` holds from ``times[k]`` until ``times[k + 1]``."""

    times: tuple
    values: tuple

    def __post_init__(self):
        t = tuple(float(x) for x in self.times)
        v = tuple(tuple(float(a) for a in np.atleast_1d(row)) for row in self.values)
        if not t or len(t) != len(v) or t[0] != 0.0 or any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("step times must start at 0 and increase strictly, one value per step")
        if len({len(row) for row in v}) != 1:
            raise ValueError("all input values need the same length")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, w):
        return cls((0.0,), (tuple(np.atleast_1d(np.asarray(w, dtype=float))),))

    @property
    def is_constant(self):
        return len(self.times) == 1

    def at(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        k = np.searchsorted(np.array(self.times), t, side="right") - 1
        return np.array(self.values)[np.maximum(k, 0)]

    def describe(self):
        if self.is_constant:
            return {"kind": "constant", "value": list(self.values[0])}
        return {"kind": "steps", "times": list(self.times), "values": [list(v) for v in self.values]}


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    scheduling: np.ndarray
    inputs: InputSignal
    termination: str = "finished"

    def write_csv(self, path, append=False):
        n, m, k = self.states.shape[1], self.outputs.shape[1], self.scheduling.shape[1]
        header = ["t"] + [f"xi_{i + 1}" for i in range(n)] + [f"z_{i + 1}" for i in range(m)] + \
                 [f"rho_{i + 1}" for i in range(k)]
        with open(path, "a" if append else "w", newline="") as fh:
            wr = csv.writer(fh)
            if not append:
                wr.writerow(header)
            for row in np.column_stack([self.times, self.states, self.outputs, self.scheduling]):
                wr.writerow([repr(float(v)) for v in row])


class Verdict(str, enum.Enum):
    CONVERGED = "Converged"
    LIMIT_CYCLE = "LimitCycle"
    DIVERGED = "Diverged"
    SCHEDULING_VIOLATION = "SchedulingViolation"


@dataclass(frozen=True)
class TrajectoryVerdict:
    kind: Verdict
    steady_state_error: float = float("nan")
    peak_to_peak: float = float("nan")
    period_estimate: float = float("nan")
    first_violation_time: float = float("nan")
    low_confidence: bool = False

    def to_dict(self):
        def num(v):
            return None if not np.isfinite(v) else float(v)

        return {
            "kind": self.kind.value,
            "steady_state_error": num(self.steady_state_error),
            "peak_to_peak": num(self.peak_to_peak),
            "period_estimate": num(self.period_estimate),
            "first_violation_time": num(self.first_violation_time),
            "low_confidence": self.low_confidence,
        }


# -- integration ----------------------------------------------------------------------


@dataclass
class BatchResult:
    """Final state of each trajectory and why it stopped."""

    final_time: np.ndarray
    final_state: np.ndarray
    status: np.ndarray
    n_steps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def _error_norm(err, y, y_new, atol, rtol):
    scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
    return np.max(np.abs(err) / scale, axis=-1)


def integrate_batch(fn, y0, t_end, opts: SimOptions, on_samples=None, targets=None, settle_tol=1e-6):
    """Integrate ``y' = fn(y, idx)`` for every row of ``y0`` from 0 to ``t_end``.

    ``fn`` receives the active rows and their indices into the batch, so
    per-row parameters such as constant inputs can be looked up.

    ``on_samples(rows, sample_idx, values)`` is called after every step with
    the uniform-grid samples (spacing ``opts.dt``) produced by that step;
    sample 0 is the initial state. When ``targets`` is given, a row stops
    early once it is within ``settle_tol`` of its target; it is then
    reported with status ``SETTLED`` and emits no further samples.
    """
    y = np.array(y0, dtype=float)
    nb, n = y.shape
    dt = opts.dt
    n_samples = int(round(t_end / dt))
    t = np.zeros(nb)
    h = np.full(nb, min(dt, t_end))
    status = np.full(nb, RUNNING)
    steps = np.zeros(nb, dtype=int)
    next_sample = np.ones(nb, dtype=int)
    if on_samples is not None:
        on_samples(np.arange(nb), np.zeros(nb, dtype=int), y.copy())
    if targets is not None:
        targets = np.asarray(targets, dtype=float)
        done = np.max(np.abs(y - targets), axis=1) < settle_tol
        status[done] = SETTLED

    act = np.flatnonzero(status == RUNNING)
    k = np.zeros((7, nb, n))
    if act.size:
        k[0, act] = fn(y[act], act)
    while act.size:
        ya, ta, ha = y[act], t[act], h[act]
        ha = np.minimum(ha, t_end - ta)
        ks = np.empty((7, act.size, n))
        ks[0] = k[0, act]
        for s in range(1, 7):
            inc = sum(a * ks[j] for j, a in enumerate(_A[s]) if a != 0.0)
            ks[s] = fn(ya + ha[:, None] * inc, act)
        y_new = ya + ha[:, None] * np.tensordot(_B, ks, axes=1)
        err = ha[:, None] * np.tensordot(_E, ks, axes=1)
        with np.errstate(invalid="ignore", over="ignore"):
            en = _error_norm(err, ya, y_new, opts.atol, opts.rtol)
        finite = np.all(np.isfinite(y_new), axis=1) & np.isfinite(en)
        ok = finite & (en <= 1.0)
        steps[act] += 1

        if np.any(ok):
            rows = act[ok]
            t_new = ta[ok] + ha[ok]
            # samples strictly inside (t, t + h], on the global uniform grid
            last = np.minimum(np.floor(t_new / dt + 1e-9).astype(int), n_samples)
            first = next_sample[rows]
            counts = np.maximum(last - first + 1, 0)
            if on_samples is not None and np.any(counts):
                sel = np.repeat(np.arange(rows.size), counts)
                idx = np.concatenate([np.arange(f, f + c) for f, c in zip(first, counts) if c])
                theta = (idx * dt - ta[ok][sel]) / ha[ok][sel]
                theta = np.clip(theta, 0.0, 1.0)
                powers = np.stack([theta, theta ** 2, theta ** 3, theta ** 4], axis=1)
                wts = powers @ _P.T  # (samples, 7)
                kk = ks[:, ok][:, sel]  # (7, samples, n)
                vals = ya[ok][sel] + ha[ok][sel, None] * np.einsum("sk,ksn->sn", wts, kk)
                on_samples(rows[sel], idx, vals)
            next_sample[rows] = np.maximum(first, last + 1)
            y[rows] = y_new[ok]
            t[rows] = t_new
            k[0, rows] = ks[6, ok]

        fac = np.where(finite, 0.9 * np.power(np.maximum(en, 1e-10), -0.2), 0.2)
        fac = np.clip(fac, 0.2, 5.0)
        fac = np.where(ok, fac, np.minimum(fac, 1.0))
        h[act] = ha * fac

        st = status[act]
        st[~finite & (np.abs(ha) <= 1e-14 * np.maximum(1.0, ta))] = NONFINITE
        st[ok & (t[act] >= t_end - 1e-12 * max(1.0, t_end))] = FINISHED
        st[np.any(np.abs(y[act]) > opts.escape_bound, axis=1) & (st == RUNNING)] = ESCAPED
        st[(h[act] < 1e-12 * np.maximum(1.0, t[act])) & (st == RUNNING)] = UNDERFLOW
        st[(steps[act] >= opts.max_steps) & (st == RUNNING)] = UNDERFLOW
        if targets is not None:
            near = np.max(np.abs(y[act] - targets[act]), axis=1) < settle_tol
            st[near & (st == RUNNING)] = SETTLED
        status[act] = st
        act = act[st == RUNNING]
    return BatchResult(t, y, status, steps)


_TERMINATION = {FINISHED: "finished", ESCAPED: "escaped", UNDERFLOW: "step_underflow",
                NONFINITE: "non_finite", SETTLED: "settled", RUNNING: "running"}


def integrate(nl: NlClosedLoop, xi0, w, horizon=None, opts: SimOptions = SimOptions()) -> Trajectory:
    """Simulate the closed loop from ``xi0`` under input ``w`` (a vector or :class:`InputSignal`).

    The input is piecewise constant, so each constant stretch is integrated
    separately and the integrator restarts at every step time. Samples
    after an escape or a step-size collapse are left as NaN.
    """
    sig = w if isinstance(w, InputSignal) else InputSignal.constant(w)
    horizon = opts.horizon if horizon is None else float(horizon)
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    xi0 = np.asarray(xi0, dtype=float).reshape(-1)
    if xi0.size != nl.n or len(sig.values[0]) != nl.clp.n_w:
        raise ValueError("initial state or input has the wrong dimension")
    dt = opts.dt
    n_samples = int(round(horizon / dt))
    states = np.full((n_samples + 1, nl.n), np.nan)
    states[0] = xi0
    edges = [t for t in sig.times if t < horizon] + [horizon]
    y = xi0[None, :]
    termination = "finished"
    for (t0, t1), value in zip(zip(edges[:-1], edges[1:]), sig.values):
        wv = np.asarray(value, dtype=float)[None, :]
        offset = int(round(t0 / dt))
        if abs(offset * dt - t0) > 1e-9:
            raise ValueError(f"step time {t0} is not a multiple of the output spacing {dt}")

        def sink(rows, idx, vals, offset=offset):
            states[offset + idx] = vals

        res = integrate_batch(lambda yy, rows: nl.field(yy, wv), y, t1 - t0, opts, on_samples=sink)
        y = res.final_state
        if res.status[0] != FINISHED:
            termination = _TERMINATION[int(res.status[0])]
            break
    times = np.arange(n_samples + 1) * dt
    wt = sig.at(times)
    outputs = nl.output(states, wt)
    sched = nl.rho(states, wt)
    return Trajectory(times, states, outputs, sched, sig, termination)


# -- classification ---------------------------------------------------------------------


def scheduling_in_set(traj: Trajectory, P: Box):
    """``(inside, first_violation_time)`` over the recorded scheduling samples."""
    valid = np.all(np.isfinite(traj.scheduling), axis=1)
    inside = P.contains(traj.scheduling) & valid
    if np.all(inside):
        return True, float("nan")
    return False, float(traj.times[np.argmin(inside)])


def _maxima(x):
    """Indices of local maxima, taking the middle of flat tops."""
    d = np.diff(x)
    up = np.flatnonzero(d > 0)
    down = np.flatnonzero(d < 0)
    out = []
    for i in up:
        j = down[np.searchsorted(down, i + 1)] if np.searchsorted(down, i + 1) < down.size else None
        if j is None:
            break
        # a maximum needs the run between the rise and the next fall to be flat
        if np.any(d[i + 1:j] > 0):
            continue
        out.append((i + 1 + j) // 2)
    return np.array(sorted(set(out)), dtype=int)


def classify(traj: Trajectory, opts: SimOptions = SimOptions(), P: Box | None = None) -> TrajectoryVerdict:
    """Sort a trajectory into converged, limit cycle, diverged or scheduling violation.

    The tail is the last ``tail_fraction`` of the horizon. A tail whose
    states all vary less than ``converged_ptp`` is converged; a larger
    variation with regularly spaced maxima (relative standard deviation of
    the spacing below ``spacing_rsd``) is a limit cycle. Anything else gets
    the closer of the two labels with ``low_confidence`` set.
    """
    times, states = traj.times, traj.states
    horizon = times[-1] - times[0]
    tail_len = int(round(opts.tail_fraction * (len(times) - 1)))
    if tail_len < 2 or horizon <= 0:
        raise ValueError("trajectory is too short for the tail window")

    finite = np.all(np.isfinite(states), axis=1)
    if traj.termination in ("escaped", "step_underflow", "non_finite") or not np.all(finite) \
            or np.any(np.abs(states[finite]) > opts.escape_bound):
        return TrajectoryVerdict(Verdict.DIVERGED)
    if P is not None:
        inside, t_viol = scheduling_in_set(traj, P)
        if not inside:
            return TrajectoryVerdict(Verdict.SCHEDULING_VIOLATION, first_violation_time=t_viol)

    tail = states[-(tail_len + 1):]
    ptp = np.ptp(tail, axis=0)
    sse = float(np.max(np.abs(traj.outputs[-1]))) if traj.outputs.size else float("nan")
    if np.all(ptp < opts.converged_ptp):
        return TrajectoryVerdict(Verdict.CONVERGED, steady_state_error=sse, peak_to_peak=float(ptp.max()))

    lead = int(np.argmax(ptp))
    peaks = _maxima(tail[:, lead])
    dt = float(np.mean(np.diff(times)))
    if peaks.size >= 3:
        spacing = np.diff(peaks) * dt
        rsd = float(np.std(spacing) / np.mean(spacing))
        if rsd < opts.spacing_rsd:
            return TrajectoryVerdict(Verdict.LIMIT_CYCLE, peak_to_peak=float(ptp[lead]),
                                     period_estimate=float(np.mean(spacing)))
    # neither test is clean: a decaying tail leans converged, a sustained one leans cyclic
    half = tail.shape[0] // 2
    early, late = np.ptp(tail[:half, lead]), np.ptp(tail[half:, lead])
    period = float(np.mean(np.diff(peaks)) * dt) if peaks.size >= 2 else float("nan")
    if late < 0.5 * early:
        return TrajectoryVerdict(Verdict.CONVERGED, steady_state_error=sse, peak_to_peak=float(ptp[lead]),
                                 low_confidence=True)
    return TrajectoryVerdict(Verdict.LIMIT_CYCLE, peak_to_peak=float(ptp[lead]), period_estimate=period,
                             low_confidence=True)
