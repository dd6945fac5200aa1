"""A small dense SDP solver for block-diagonal LMIs.

Problems have the form::

    minimize    c @ x
    subject to  F0_b + sum_i x_i F_ib  >= 0      for every block b

Strict blocks (``> 0``) are handled by subtracting ``strictness_margin * I``
from their constant term.

The solver follows the central path of the log-det barrier with damped
Newton steps, in two phases:

* phase I maximizes a uniform margin ``t`` with ``F_b(x) >= t I``, starting
  from ``x = 0`` with ``t`` shifted below the smallest eigenvalue of the
  constant terms. It stops as soon as ``t > 0``. A certified upper bound
  ``t* < -1e-8`` proves infeasibility.
* phase II minimizes the objective from that strictly feasible point.

At every centre the dual matrices ``Z_b = G_b^-1 / kappa`` are dual
feasible (up to the Newton decrement), so ``N / kappa`` bounds the duality
gap, with ``N`` the total barrier dimension. Newton steps are invariant
under affine changes of the decision variables, which keeps badly scaled
certificates (entries spanning many decades) solvable.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from . import matlib

__all__ = ["Status", "LmiBlock", "LmiProblem", "SdpSolution", "solve", "verify_certificate", "affine_problem"]

log = logging.getLogger(__name__)

MAX_ITER = 200  # centring rounds; Newton steps per round are capped separately
MAX_NEWTON = 100
INFEASIBLE_TOL = 1e-8
GAP_TOL = 1e-7
CENTERED = 1e-10  # half squared Newton decrement
ROUNDOFF_CENTERED = 1e-6  # accepted once the decrement stops shrinking
KAPPA_GROWTH = 20.0
SEARCH_BOX = 1e9  # largest |x_i| bound; keeps the barrier bounded below
FIRST_RADIUS = 1e3
RADIUS_GROWTH = 10.0
BOX_ACTIVE = 0.5  # a solution beyond this fraction of the radius triggers a larger box
PHASE1_CAP = 1.0


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    FEASIBLE = "Feasible"
    INFEASIBLE = "Infeasible"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass(frozen=True)
class LmiBlock:
    """One constraint ``F0 + sum_i x_i F[i] >= 0`` (``> 0`` when ``strict``)."""

    F0: np.ndarray
    F: tuple  # one symmetric matrix per decision variable
    strict: bool = False
    name: str = ""

    def __post_init__(self):
        f0 = matlib.symmetrize(self.F0)
        fs = tuple(matlib.symmetrize(f) for f in self.F)
        for f in fs:
            if f.shape != f0.shape:
                raise ValueError(f"block {self.name!r}: coefficient shape {f.shape} != {f0.shape}")
        object.__setattr__(self, "F0", f0)
        object.__setattr__(self, "F", fs)

    @property
    def dim(self):
        return self.F0.shape[0]

    def evaluate(self, x):
        out = self.F0.copy()
        for xi, fi in zip(x, self.F):
            out += xi * fi
        return out


@dataclass(frozen=True)
class LmiProblem:
    n_vars: int
    objective: np.ndarray
    blocks: tuple
    strictness_margin: float = 1e-6

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float).reshape(-1)
        if c.size != self.n_vars:
            raise ValueError(f"objective has length {c.size}, expected {self.n_vars}")
        for b in self.blocks:
            if len(b.F) != self.n_vars:
                raise ValueError(f"block {b.name!r} has {len(b.F)} coefficients, expected {self.n_vars}")
        if self.strictness_margin < 0:
            raise ValueError("strictness_margin must be nonnegative")
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "blocks", tuple(self.blocks))

    @property
    def is_feasibility(self):
        return not np.any(self.objective)

    def shifted_constants(self):
        """Constant terms with the strictness margin subtracted on strict blocks."""
        return [b.F0 - (self.strictness_margin * np.eye(b.dim) if b.strict else 0.0) for b in self.blocks]


@dataclass
class SdpSolution:
    status: Status
    x: np.ndarray
    objective_value: float
    min_block_margin: float
    iterations: int = 0
    trace: list = field(default_factory=list)  # objective at each phase II centre
    gap: float = float("nan")

    @property
    def ok(self):
        return self.status in (Status.OPTIMAL, Status.FEASIBLE)


def verify_certificate(p: LmiProblem, x) -> float:
    """Smallest eigenvalue over all constraint blocks of ``p`` at ``x``.

    The strictness margin is *not* subtracted, so a solution of a strict
    problem shows a margin of at least ``p.strictness_margin``.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != p.n_vars:
        raise ValueError(f"x has length {x.size}, expected {p.n_vars}")
    if not p.blocks:
        return float("inf")
    return min(float(matlib.sym_eig(b.evaluate(x))[0][0]) for b in p.blocks)


def affine_problem(fn: Callable[[np.ndarray], Sequence[np.ndarray]], n_vars, objective=None, strict=None,
                   names=None, strictness_margin=1e-6) -> LmiProblem:
    """Build an :class:`LmiProblem` from a function that is affine in ``x``.

    ``fn(x)`` must return the list of block matrices ``F_b(x)``; its
    coefficients are recovered by evaluating at zero and at unit vectors.
    """
    base = [np.asarray(m, dtype=float) for m in fn(np.zeros(n_vars))]
    coefs = [[] for _ in base]
    for i in range(n_vars):
        e = np.zeros(n_vars)
        e[i] = 1.0
        for k, m in enumerate(fn(e)):
            coefs[k].append(np.asarray(m, dtype=float) - base[k])
    strict = [False] * len(base) if strict is None else list(strict)
    names = [f"block{k}" for k in range(len(base))] if names is None else list(names)
    blocks = tuple(LmiBlock(base[k], tuple(coefs[k]), strict[k], names[k]) for k in range(len(base)))
    c = np.zeros(n_vars) if objective is None else np.asarray(objective, dtype=float)
    return LmiProblem(n_vars, c, blocks, strictness_margin)


# -- barrier path following ---------------------------------------------------------


class _Barrier:
    """``kappa * c.y - sum_b log det G_b(y)`` with ``G_b(y) = G0_b + sum_i y_i G_ib``.

    Box constraints ``|y_i| <= radius`` are appended as 1x1 blocks so
    every centring problem has a minimizer.
    """

    def __init__(self, c, g0s, gss, box_vars, radius=SEARCH_BOX):
        self.c = np.asarray(c, dtype=float)
        n = self.c.size
        g0s, gss = list(g0s), [list(g) for g in gss]
        for i in box_vars:
            for sign in (1.0, -1.0):
                g0s.append(np.array([[radius]]))
                gss.append([np.array([[-sign if j == i else 0.0]]) for j in range(n)])
        self.g0s = g0s
        self.gss = gss
        self.n = n
        self.dim = sum(g.shape[0] for g in g0s)

    def slacks(self, y):
        out = []
        for g0, gs in zip(self.g0s, self.gss):
            g = g0.copy()
            for yi, gi in zip(y, gs):
                if yi != 0.0:
                    g += yi * gi
            out.append(g)
        return out

    def value(self, y, kappa):
        total = kappa * float(self.c @ y)
        for g in self.slacks(y):
            l = matlib.cholesky(g)
            if l is None:
                return np.inf
            total -= 2.0 * np.sum(np.log(np.diag(l)))
        return total

    def newton(self, y, kappa):
        """Newton step and squared decrement.

        With ``G = L L^T`` the Hessian is ``J^T J`` where column ``i`` of ``J``
        is ``vec(L^-1 G_i L^-T)``. Working with a QR factorization of ``J``
        instead of forming ``J^T J`` keeps the step accurate when the slacks
        span many decades.
        """
        cols, rhs = [], []
        for g, gs in zip(self.slacks(y), self.gss):
            l = matlib.cholesky(g)
            if l is None:
                return np.full(self.n, np.nan), np.nan
            li = solve_triangular(l, np.eye(l.shape[0]), lower=True)
            cols.append(np.stack([(li @ f @ li.T).ravel() for f in gs], axis=1))
            rhs.append(np.eye(l.shape[0]).ravel())
        j = np.vstack(cols)
        e = np.concatenate(rhs)
        d = np.linalg.norm(j, axis=0)
        d[d == 0.0] = 1.0
        q, r = np.linalg.qr(j / d)
        if np.min(np.abs(np.diag(r))) <= 1e-15 * np.max(np.abs(np.diag(r))):
            return np.full(self.n, np.nan), np.nan
        # step = (J^T J)^-1 (J^T e - kappa c), in scaled coordinates
        centre = solve_triangular(r, q.T @ e)
        cs = self.c / d
        pull = solve_triangular(r, solve_triangular(r, cs, trans="T"))
        step = (centre - kappa * pull) / d
        grad = kappa * self.c - j.T @ e
        return step, float(-grad @ step)

    def feasible(self, y):
        return all(matlib.cholesky(g) is not None for g in self.slacks(y))

    def center(self, y, kappa, max_newton=MAX_NEWTON):
        """Damped Newton to the ``kappa``-centre. Returns ``(y, newton_steps, centred)``.

        Steps of length ``1 / (1 + lambda)`` (``lambda`` the Newton decrement)
        stay inside the domain of a self-concordant barrier and need no
        function values, which are unreliable once the slacks are badly
        conditioned.
        """
        prev = np.inf
        for k in range(max_newton):
            step, dec = self.newton(y, kappa)
            if not np.isfinite(dec) or dec < 0.0:
                return y, k, False
            if dec / 2.0 <= CENTERED:
                return y, k, True
            if dec / 2.0 <= ROUNDOFF_CENTERED and dec > 0.5 * prev:
                # decrement stuck at its roundoff floor
                return y, k, True
            prev = dec
            lam = np.sqrt(dec)
            a = 1.0 if lam < 0.25 else 1.0 / (1.0 + lam)
            cand = y + a * step
            while not self.feasible(cand):
                # only reachable through roundoff in the step
                a *= 0.5
                if a < 1e-14:
                    return y, k, False
                cand = y + a * step
            y = cand
        return y, max_newton, False


def _phase1(p: LmiProblem, max_iter, radius):
    """Margin maximization ``max t : F_b(x) - t I >= 0, t <= PHASE1_CAP, |x_i| <= radius``.

    Returns ``(x, t, t_upper, newton_steps)``; ``t_upper`` is a certified
    bound on the optimum (``inf`` when the loop stopped at ``t > 0``).
    """
    n = p.n_vars
    f0s = p.shifted_constants()
    g0s = [f0 for f0 in f0s] + [np.array([[PHASE1_CAP]])]
    gss = [list(b.F) + [-np.eye(b.dim)] for b in p.blocks]
    gss.append([np.zeros((1, 1))] * n + [-np.ones((1, 1))])
    c = np.zeros(n + 1)
    c[-1] = -1.0
    bar = _Barrier(c, g0s, gss, range(n), radius)
    y = np.zeros(n + 1)
    y[-1] = min(min(float(matlib.sym_eig(f)[0][0]) for f in f0s) - 1.0, PHASE1_CAP - 1.0)

    kappa, steps, t_upper = 1.0, 0, np.inf
    for _ in range(max_iter):
        # stop as soon as any Newton iterate is strictly feasible
        centred = False
        for _k in range(MAX_NEWTON):
            if y[-1] > 0.0:
                return y[:n], float(y[-1]), np.inf, steps
            y_new, k, centred = bar.center(y, kappa, max_newton=1)
            steps += 1
            moved = not np.array_equal(y_new, y)
            y = y_new
            if centred or not moved:
                break
        if y[-1] > 0.0:
            return y[:n], float(y[-1]), np.inf, steps
        if centred:
            t_upper = float(y[-1]) + bar.dim / kappa
            if t_upper < -INFEASIBLE_TOL:
                return y[:n], float(y[-1]), t_upper, steps
        if bar.dim / kappa < 1e-12:
            break
        kappa *= KAPPA_GROWTH
    return y[:n], float(y[-1]), t_upper, steps


def _phase2(p: LmiProblem, x, radius, max_iter, gap_tol):
    bar = _Barrier(p.objective, p.shifted_constants(), [b.F for b in p.blocks], range(p.n_vars), radius)
    kappa = bar.dim / max(1.0, abs(float(p.objective @ x)))
    trace, steps, status = [], 0, Status.NUMERICAL_FAILURE
    gap = np.inf
    for _ in range(max_iter):
        x_new, k, centred = bar.center(x, kappa)
        steps += k
        if not centred:
            log.debug("centring failed at kappa=%.3e (objective %.6g)", kappa, float(p.objective @ x_new))
            break
        x = x_new
        obj = float(p.objective @ x)
        trace.append(obj)
        gap = bar.dim / kappa
        if gap <= gap_tol * max(1.0, abs(obj)):
            status = Status.OPTIMAL
            break
        # never step past the barrier weight the tolerance asks for
        kappa = min(kappa * KAPPA_GROWTH, 1.01 * bar.dim / (gap_tol * max(1.0, abs(obj))))
    return x, status, steps, trace, gap


def _radii():
    r = FIRST_RADIUS
    while r < SEARCH_BOX:
        yield r
        r *= RADIUS_GROWTH
    yield SEARCH_BOX


def solve(p: LmiProblem, max_iter=MAX_ITER, gap_tol=GAP_TOL) -> SdpSolution:
    """Solve ``p``. Infeasible or badly conditioned problems are reported via ``status``, not raised.

    ``Optimal`` means the certified relative duality gap is at most ``gap_tol``.

    The decision variables are confined to a box ``|x_i| <= R``. ``R`` starts
    small and grows while the box blocks feasibility, or while it binds and
    a larger box still lowers the objective. Keeping ``R`` small keeps the
    barrier centres well scaled when the optimal set is unbounded.
    """
    n = p.n_vars
    if not p.blocks:
        st = Status.FEASIBLE if p.is_feasibility else Status.NUMERICAL_FAILURE
        return SdpSolution(st, np.zeros(n), 0.0, float("inf"))

    steps = 0
    radii = list(_radii())
    for k, radius in enumerate(radii):
        x1, t1, t_upper, it = _phase1(p, max_iter, radius)
        steps += it
        if t1 > 0.0:
            break
        if k == len(radii) - 1:
            if t_upper < -INFEASIBLE_TOL:
                log.debug("phase I bound t* <= %.3e: infeasible", t_upper)
                return SdpSolution(Status.INFEASIBLE, x1, float(p.objective @ x1), t_upper, steps)
            return SdpSolution(Status.NUMERICAL_FAILURE, x1, float(p.objective @ x1),
                               verify_certificate(p, x1), steps)

    if p.is_feasibility:
        return SdpSolution(Status.FEASIBLE, x1, 0.0, verify_certificate(p, x1), steps)

    best = None
    for radius in radii[k:]:
        x, status, it, trace, gap = _phase2(p, x1, radius, max_iter, gap_tol)
        steps += it
        obj = float(p.objective @ x)
        if best is not None:
            b_obj = float(best[0] @ p.objective)
            if obj >= b_obj - gap_tol * max(1.0, abs(b_obj)):
                break
            if status is not Status.OPTIMAL:
                # the smaller box was not optimal either, and this one is uncertified
                best = (x, Status.NUMERICAL_FAILURE, trace, gap)
                break
        best = (x, status, trace, gap)
        if status is not Status.OPTIMAL or np.max(np.abs(x), initial=0.0) < BOX_ACTIVE * radius:
            break
    x, status, trace, gap = best
    if status is not Status.OPTIMAL:
        log.warning("no certified optimum (gap %.3e, objective %.6g)", gap, float(p.objective @ x))
    margin = verify_certificate(p, x)
    if margin < -INFEASIBLE_TOL:
        status = Status.NUMERICAL_FAILURE
    return SdpSolution(status, x, float(p.objective @ x), margin, steps, trace, gap)
