"""Quadratic Lyapunov analysis of LPV closed loops and its gridded set estimates.

Around an equilibrium ``(xi_bar, w_bar)`` the derivative of
``V(xi) = (xi - xi_bar)^T X (xi - xi_bar)`` along the closed loop with
``rho = mu(x)`` is

    vdot = e^T Q(rho) e + 2 e^T X Z(rho),   e = xi - xi_bar,

with ``Q(rho) = A(rho)^T X + X A(rho)`` and ``Z(rho) = A(rho) xi_bar + B(rho) w_bar``.
The vertex LMIs only control ``Q``; ``Z`` vanishes at ``rho = mu(x_bar)``
alone, which is why the decrease can fail away from the origin.
"""

from __future__ import annotations

import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from . import matlib, sdp
from .lpvmodel import AffineLpvSS, Box, NlClosedLoop, OutOfSetError, eval_matrices, vertices
from .sim import FINISHED, SETTLED, SimOptions, integrate_batch

__all__ = [
    "QuadLyapunov",
    "StabilityResult",
    "L2GainResult",
    "EquilibriumPoint",
    "GridSpec",
    "GridSet",
    "AlphaSweepRow",
    "quadratic_stability",
    "l2gain",
    "Q_of",
    "Z_of",
    "vdot",
    "vdot_max",
    "equilibrium",
    "equilibria",
    "compute_S",
    "compute_Shat",
    "compute_XiBar",
    "compute_R",
    "alpha_sweep",
    "w_grid",
    "worker_count",
]

log = logging.getLogger(__name__)

STRICT = 1e-6
L2_GAP = 1e-5  # well inside the 1e-4 the gain is quoted to
NEWTON_MAX_ITER = 100
NEWTON_TOL = 1e-12
N_SEEDS = 8


def worker_count():
    """Thread cap from ``LPVLAB_THREADS`` (default: all cores)."""
    env = os.environ.get("LPVLAB_THREADS", "").strip()
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"LPVLAB_THREADS must be a positive integer, got {env!r}") from None
        if n < 1:
            raise ValueError("LPVLAB_THREADS must be a positive integer")
        return n
    return os.cpu_count() or 1


# -- symmetric matrix variables -------------------------------------------------------


def _sym_unpack(v, n):
    x = np.zeros((n, n))
    iu = np.triu_indices(n)
    x[iu] = v[: len(iu[0])]
    return x + np.triu(x, 1).T


def _n_sym(n):
    return n * (n + 1) // 2


@dataclass(frozen=True)
class QuadLyapunov:
    X: np.ndarray

    def __post_init__(self):
        x = matlib.symmetrize(self.X)
        if matlib.sym_eig(x)[0][0] <= 0.0:
            raise ValueError("Lyapunov matrix must be positive definite")
        object.__setattr__(self, "X", x)

    def value(self, xi, xi_bar=None):
        e = np.asarray(xi, dtype=float) - (0.0 if xi_bar is None else np.asarray(xi_bar, dtype=float))
        return np.einsum("...i,ij,...j->...", e, self.X, e)


@dataclass
class StabilityResult:
    status: sdp.Status
    lyapunov: QuadLyapunov | None
    vertex_margins: list
    min_eig_X: float
    evidence: float  # smallest block margin; negative when infeasible
    solution: sdp.SdpSolution = field(repr=False, default=None)

    @property
    def feasible(self):
        return self.lyapunov is not None


@dataclass
class L2GainResult:
    status: sdp.Status
    gamma: float
    lyapunov: QuadLyapunov | None
    vertex_margins: list
    gap: float
    solution: sdp.SdpSolution = field(repr=False, default=None)


def lyapunov_margins(clp: AffineLpvSS, X):
    """``(lambda_min(X), [lambda_max(A(v)^T X + X A(v)) for v in vertices])``."""
    X = np.asarray(X, dtype=float)
    lo = float(matlib.sym_eig(X)[0][0])
    out = []
    for v in vertices(clp.P):
        a = eval_matrices(clp, v)[0]
        out.append(float(matlib.sym_eig(matlib.symmetrize(a.T @ X + X @ a))[0][-1]))
    return lo, out


def quadratic_stability(clp: AffineLpvSS, strictness=STRICT) -> StabilityResult:
    """Search for one ``X >= I`` with ``A(v)^T X + X A(v) < 0`` at every vertex of ``P``.

    The normalization ``X >= I`` removes the scale freedom of the
    homogeneous problem. On success the reported vertex margins are the
    largest eigenvalues of the vertex Lyapunov matrices.
    """
    n = clp.n_x
    verts = [eval_matrices(clp, v)[0] for v in vertices(clp.P)]

    def blocks(v):
        X = _sym_unpack(v, n)
        return [X - np.eye(n)] + [-(a.T @ X + X @ a) for a in verts]

    p = sdp.affine_problem(blocks, _n_sym(n), strict=[False] + [True] * len(verts),
                           names=["X-I"] + [f"vertex{k}" for k in range(len(verts))],
                           strictness_margin=strictness)
    sol = sdp.solve(p)
    if not sol.ok:
        return StabilityResult(sol.status, None, [], float("nan"), sol.min_block_margin, sol)
    X = _sym_unpack(sol.x, n)
    lo, margins = lyapunov_margins(clp, X)
    return StabilityResult(sol.status, QuadLyapunov(X), margins, lo, sol.min_block_margin, sol)


def brl_block(a, b, c, d, X, gamma):
    """The bounded-real matrix, negative definite when ``gamma`` bounds the gain."""
    nw, nz = b.shape[1], c.shape[0]
    return np.block([
        [a.T @ X + X @ a, X @ b, c.T],
        [b.T @ X, -gamma * np.eye(nw), d.T],
        [c, d, -gamma * np.eye(nz)],
    ])


def l2gain(clp: AffineLpvSS, strictness=STRICT, gap_tol=L2_GAP) -> L2GainResult:
    """Smallest ``gamma`` with a common ``X > 0`` satisfying the bounded-real LMI at the vertices.

    ``gamma`` is a decision variable with a linear objective, so one SDP
    gives the bound with a certified duality gap. If the solver cannot close
    the gap to ``gap_tol`` it is asked once more at the coarser ``1e-4``.
    """
    n = clp.n_x
    m = _n_sym(n)
    mats = [eval_matrices(clp, v) for v in vertices(clp.P)]

    def blocks(v):
        X = _sym_unpack(v, n)
        return [X] + [-brl_block(a, b, c, d, X, v[m]) for a, b, c, d in mats]

    c = np.zeros(m + 1)
    c[m] = 1.0
    p = sdp.affine_problem(blocks, m + 1, objective=c, strict=[True] * (1 + len(mats)),
                           names=["X"] + [f"brl{k}" for k in range(len(mats))], strictness_margin=strictness)
    sol = sdp.solve(p, gap_tol=gap_tol)
    if sol.status is sdp.Status.NUMERICAL_FAILURE and gap_tol < 1e-4:
        log.info("retrying the gain LMI at gap 1e-4")
        sol = sdp.solve(p, gap_tol=1e-4)
    if sol.status is not sdp.Status.OPTIMAL:
        return L2GainResult(sol.status, float("nan"), None, [], sol.gap, sol)
    X = _sym_unpack(sol.x, n)
    gamma = float(sol.x[m])
    margins = [float(matlib.sym_eig(matlib.symmetrize(brl_block(a, b, cc, d, X, gamma)))[0][-1])
               for a, b, cc, d in mats]
    return L2GainResult(sol.status, gamma, QuadLyapunov(X), margins, sol.gap, sol)


# -- the non-zero equilibrium decomposition ---------------------------------------------


def _scheduled(clp, rho):
    """Batched ``A(rho), B(rho)`` for ``rho`` of shape ``(..., n_rho)``; no membership check."""
    rho = np.asarray(rho, dtype=float)
    coef = np.concatenate([np.ones(rho.shape[:-1] + (1,)), rho], axis=-1)
    return np.einsum("...k,kij->...ij", coef, clp.A), np.einsum("...k,kij->...ij", coef, clp.B)


def _check_rho(clp, rho, check):
    if check and not np.all(clp.P.contains(np.asarray(rho, dtype=float))):
        raise OutOfSetError(f"scheduling value outside P={clp.P.to_list()}")


def Q_of(rho, X, clp: AffineLpvSS, check=True):
    """``A(rho)^T X + X A(rho)``, batched over leading axes of ``rho``."""
    _check_rho(clp, rho, check)
    a, _ = _scheduled(clp, np.atleast_1d(rho))
    X = np.asarray(X, dtype=float)
    return np.swapaxes(a, -1, -2) @ X + X @ a


def Z_of(rho, xi_bar, w_bar, clp: AffineLpvSS, check=True):
    """``A(rho) xi_bar + B(rho) w_bar``, batched over leading axes of ``rho``."""
    _check_rho(clp, rho, check)
    a, b = _scheduled(clp, np.atleast_1d(rho))
    return a @ np.asarray(xi_bar, dtype=float) + b @ np.asarray(w_bar, dtype=float)


def vdot(xi, xi_bar, w_bar, X, nl: NlClosedLoop):
    """Lyapunov derivative from the ``Q``/``Z`` decomposition, batched over ``xi``.

    Evaluation outside the scheduling box is allowed.
    """
    xi = np.asarray(xi, dtype=float)
    w_bar = np.asarray(w_bar, dtype=float)
    rho = nl.rho(xi, np.broadcast_to(w_bar, xi.shape[:-1] + w_bar.shape))
    q = Q_of(rho, X, nl.clp, check=False)
    z = Z_of(rho, xi_bar, w_bar, nl.clp, check=False)
    e = xi - np.asarray(xi_bar, dtype=float)
    return np.einsum("...i,...ij,...j->...", e, q, e) + 2.0 * np.einsum("...i,ij,...j->...", e, X, z)


def vdot_max(xi, xi_bar, w_bar, X, nl: NlClosedLoop):
    """Supremum of ``vdot`` over all states sharing the scheduling value ``mu(xi)``.

    Only the entries of ``xi`` read by the scheduling map matter. With
    ``Q`` negative definite the quadratic in ``e`` peaks at
    ``e* = (-Q)^-1 X Z`` with value ``(X Z)^T (-Q)^-1 (X Z) >= 0``.
    """
    xi = np.asarray(xi, dtype=float)
    w_bar = np.asarray(w_bar, dtype=float)
    rho = nl.rho(xi, np.broadcast_to(w_bar, xi.shape[:-1] + w_bar.shape))
    q = Q_of(rho, X, nl.clp, check=False)
    top = np.linalg.eigvalsh(q)[..., -1]
    if np.any(top >= 0.0):
        raise matlib.SingularMatrixError("Q(mu(x)) is not negative definite; the quadratic has no maximum")
    g = np.einsum("ij,...j->...i", X, Z_of(rho, xi_bar, w_bar, nl.clp, check=False))
    sol = np.linalg.solve(-q, g[..., None])[..., 0]
    return np.maximum(np.einsum("...i,...i->...", g, sol), 0.0)


# -- equilibria -----------------------------------------------------------------------


@dataclass(frozen=True)
class EquilibriumPoint:
    xi_bar: np.ndarray
    w_bar: np.ndarray
    rho_bar: np.ndarray
    residual: float
    in_P: bool
    multiple: bool = False


def _seeds(box: Box, n_seeds=N_SEEDS):
    """Deterministic seeds: the box centre and a Halton sequence across the box."""
    pts = qmc.Halton(d=box.dim, scramble=False).random(n_seeds)[1:]
    centre = 0.5 * (box.lower + box.upper)
    return np.vstack([centre, box.lower + pts * (box.upper - box.lower)])


def equilibria(W, nl: NlClosedLoop, box: Box):
    """Equilibria for a batch of constant inputs ``W`` (shape ``(k, n_w)``).

    Damped Newton from every seed; the first converged seed gives the
    reported root. Returns ``(xi_bar, residual, multiple)``; rows that no
    seed solved are NaN.
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    seeds = _seeds(box)
    k, s, n = W.shape[0], seeds.shape[0], nl.n
    xi = np.broadcast_to(seeds, (k, s, n)).copy()
    w = np.broadcast_to(W[:, None, :], (k, s, W.shape[1]))
    f = nl.field(xi, w)
    fn = np.linalg.norm(f, axis=-1)
    tol = NEWTON_TOL * (1.0 + np.linalg.norm(xi, axis=-1) + np.linalg.norm(w, axis=-1))
    done = fn <= tol
    for _ in range(NEWTON_MAX_ITER):
        if np.all(done):
            break
        jac = nl.field_jacobian(xi, w)
        with np.errstate(all="ignore"):
            try:
                step = np.linalg.solve(jac, -f[..., None])[..., 0]
            except np.linalg.LinAlgError:
                step = (np.linalg.pinv(jac) @ -f[..., None])[..., 0]
        step[done] = 0.0
        a = np.ones((k, s))
        for _ in range(30):
            cand = xi + a[..., None] * step
            with np.errstate(all="ignore"):
                fc = nl.field(cand, w)
                fcn = np.linalg.norm(fc, axis=-1)
            bad = ~(fcn <= (1.0 - 1e-4 * a) * fn) & ~done
            if not np.any(bad):
                break
            a = np.where(bad, 0.5 * a, a)
        xi = np.where(done[..., None], xi, cand)
        f = np.where(done[..., None], f, fc)
        fn = np.where(done, fn, fcn)
        tol = NEWTON_TOL * (1.0 + np.linalg.norm(xi, axis=-1) + np.linalg.norm(w, axis=-1))
        stalled = (a < 2.0 ** -29) & ~done
        done = done | (fn <= tol) | stalled
    # accept roundoff-level residuals
    ok = fn <= 1e-10 * (1.0 + np.linalg.norm(xi, axis=-1) + np.linalg.norm(w, axis=-1))
    pick = np.argmax(ok, axis=1)
    rows = np.arange(k)
    root = np.where(ok[rows, pick][:, None], xi[rows, pick], np.nan)
    res = np.where(ok[rows, pick], fn[rows, pick], np.nan)
    spread = np.linalg.norm(xi - root[:, None, :], axis=-1)
    multiple = np.any(ok & (spread > 1e-6 * (1.0 + np.linalg.norm(root, axis=-1))[:, None]), axis=1)
    if np.any(multiple):
        warnings.warn(f"{int(multiple.sum())} input(s) have several equilibria; reporting the first seed's root",
                      RuntimeWarning, stacklevel=2)
    return root, res, multiple


def equilibrium(w_bar, nl: NlClosedLoop, box: Box) -> EquilibriumPoint:
    """The equilibrium of the closed loop under the constant input ``w_bar``."""
    w_bar = np.asarray(w_bar, dtype=float).reshape(-1)
    root, res, multiple = equilibria(w_bar[None, :], nl, box)
    if not np.all(np.isfinite(root)):
        raise matlib.ConvergenceError(f"Newton did not converge for w_bar={w_bar.tolist()}")
    xi = root[0]
    rho = nl.rho(xi, w_bar)
    return EquilibriumPoint(xi, w_bar, rho, float(res[0]), bool(nl.clp.P.contains(rho)), bool(multiple[0]))


# -- grids ----------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Uniform cell grid over a box; ``counts[i]`` cells along axis ``i``."""

    box: Box
    counts: tuple

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if len(counts) != self.box.dim or any(c < 0 for c in counts):
            raise ValueError("need one nonnegative cell count per box axis")
        object.__setattr__(self, "counts", counts)

    @property
    def width(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (self.box.upper - self.box.lower) / np.array(self.counts, dtype=float)

    @property
    def size(self):
        return int(np.prod(self.counts))

    def axes(self):
        return [self.box.lower[i] + (np.arange(c) + 0.5) * self.width[i] for i, c in enumerate(self.counts)]

    def centers(self):
        """Cell centres, shape ``counts + (dim,)``."""
        if self.size == 0:
            return np.zeros(self.counts + (self.box.dim,))
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def lattice_index(self, pts):
        """Integer cell coordinates on the infinite extension of the grid."""
        return np.floor((np.asarray(pts, dtype=float) - self.box.lower) / self.width).astype(np.int64)

    def inside(self, idx):
        return np.all((idx >= 0) & (idx < np.array(self.counts)), axis=-1)

    def refined(self):
        return GridSpec(self.box, tuple(2 * c for c in self.counts))


@dataclass
class GridSet:
    grid: GridSpec
    mask: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool).reshape(self.grid.counts)

    @property
    def count(self):
        return int(self.mask.sum())

    def issubset(self, other: "GridSet"):
        return not np.any(self.mask & ~other.mask)

    def __and__(self, other):
        return GridSet(self.grid, self.mask & other.mask)

    def __or__(self, other):
        return GridSet(self.grid, self.mask | other.mask)

    def write_csv(self, path):
        """One row per cell: centre coordinates and the 0/1 membership."""
        c = self.grid.centers().reshape(-1, self.grid.box.dim)
        with open(path, "w") as fh:
            fh.write(",".join([f"xi_{i + 1}" for i in range(c.shape[1])] + ["member"]) + "\n")
            for row, m in zip(c, self.mask.reshape(-1)):
                fh.write(",".join(repr(float(v)) for v in row) + f",{int(m)}\n")


def w_grid(box: Box, counts):
    """Points of a uniform node grid over ``box`` (both ends included), shape ``(k, dim)``."""
    axes = [np.linspace(lo, hi, int(c)) if c > 1 else np.array([0.5 * (lo + hi)])
            for lo, hi, c in zip(box.lower, box.upper, counts)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, box.dim)


def _mark_points(grid: GridSpec, pts, mask=None):
    mask = np.zeros(grid.counts, dtype=bool) if mask is None else mask
    pts = np.asarray(pts, dtype=float).reshape(-1, grid.box.dim)
    pts = pts[np.all(np.isfinite(pts), axis=1)]
    idx = grid.lattice_index(pts)
    idx = idx[grid.inside(idx)]
    mask[tuple(idx.T)] = True
    return mask


class _GridCache:
    """Per-cell scheduled matrices, reused across many equilibria."""

    def __init__(self, grid: GridSpec, X, nl: NlClosedLoop):
        self.centers = grid.centers().reshape(-1, grid.box.dim)
        zero_w = np.zeros((self.centers.shape[0], nl.clp.n_w))
        self.rho = nl.rho(self.centers, zero_w) if nl.mu.source == "state" else None
        self.X = np.asarray(X, dtype=float)
        self.nl = nl
        if self.rho is not None:
            self.q = Q_of(self.rho, X, nl.clp, check=False)
            self.a, self.b = _scheduled(nl.clp, self.rho)

    def vdot(self, xi_bar, w_bar):
        if self.rho is None:
            return vdot(self.centers, xi_bar, w_bar, self.X, self.nl)
        e = self.centers - xi_bar
        z = self.a @ xi_bar + self.b @ w_bar
        return np.einsum("ci,cij,cj->c", e, self.q, e) + 2.0 * np.einsum("ci,ij,cj->c", e, self.X, z)


def compute_S(w_bar, grid: GridSpec, X, nl: NlClosedLoop, margin=0.0, xi_bar=None, _cache=None) -> GridSet:
    """Cells whose centre has ``vdot < -margin`` around the equilibrium of ``w_bar``.

    The decrease condition is only asked of states other than the
    equilibrium, so the cell holding ``xi_bar`` itself is counted in.
    """
    if grid.size == 0:
        return GridSet(grid, np.zeros(grid.counts, dtype=bool))
    w_bar = np.asarray(w_bar, dtype=float)
    if xi_bar is None:
        xi_bar = equilibrium(w_bar, nl, grid.box).xi_bar
    cache = _cache or _GridCache(grid, X, nl)
    mask = (cache.vdot(np.asarray(xi_bar, dtype=float), w_bar) < -margin).reshape(grid.counts)
    _mark_points(grid, xi_bar, mask)
    return GridSet(grid, mask)


def _chunks(k, parts):
    bounds = np.linspace(0, k, max(1, min(parts, k)) + 1).astype(int)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def compute_Shat(W, grid: GridSpec, X, nl: NlClosedLoop, margin=0.0, xi_bars=None) -> GridSet:
    """Intersection of the decrease sets over all inputs in ``W``."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if grid.size == 0:
        return GridSet(grid, np.zeros(grid.counts, dtype=bool))
    if xi_bars is None:
        xi_bars = equilibria(W, nl, grid.box)[0]
    cache = _GridCache(grid, X, nl)

    def part(sl):
        m = np.ones(grid.counts, dtype=bool)
        for w, xb in zip(W[sl], xi_bars[sl]):
            m &= compute_S(w, grid, X, nl, margin, xi_bar=xb, _cache=cache).mask
        return m

    with ThreadPoolExecutor(max_workers=worker_count()) as ex:
        masks = list(ex.map(part, _chunks(W.shape[0], worker_count())))
    return GridSet(grid, np.logical_and.reduce(masks))


def compute_XiBar(W, grid: GridSpec, nl: NlClosedLoop, xi_bars=None) -> GridSet:
    """Cells holding the equilibrium of at least one input in ``W``."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if xi_bars is None:
        xi_bars = equilibria(W, nl, grid.box)[0]
    return GridSet(grid, _mark_points(grid, xi_bars))


@dataclass
class ReachResult:
    cells: GridSet
    violation_cells: int
    n_runs: int
    unfinished_runs: int


def compute_R(W_start, W_input, grid: GridSpec, nl: NlClosedLoop, opts: SimOptions = SimOptions(),
              xi_starts=None, xi_targets=None, batch=512) -> ReachResult:
    """Cells visited by the closed loop started at the equilibrium of each ``w0`` in ``W_start``
    and driven by each constant ``w1`` in ``W_input``.

    Consecutive output samples are joined by straight segments, which are
    subsampled finely enough (a quarter cell) to mark every crossed cell.
    Points outside the grid box are counted as violation cells on the
    grid's infinite lattice. A run stops early once it is within 1e-6 of
    the equilibrium of its input, whose cell is marked.
    """
    W_start = np.atleast_2d(np.asarray(W_start, dtype=float))
    W_input = np.atleast_2d(np.asarray(W_input, dtype=float))
    if xi_starts is None:
        xi_starts = equilibria(W_start, nl, grid.box)[0]
    if xi_targets is None:
        xi_targets = equilibria(W_input, nl, grid.box)[0]
    n0, n1 = W_start.shape[0], W_input.shape[0]
    i0, i1 = np.meshgrid(np.arange(n0), np.arange(n1), indexing="ij")
    i0, i1 = i0.ravel(), i1.ravel()
    keep = np.all(np.isfinite(xi_starts[i0]), axis=1)
    i0, i1 = i0[keep], i1[keep]

    def run(sl):
        y0 = xi_starts[i0[sl]]
        w = W_input[i1[sl]]
        tgt = xi_targets[i1[sl]]
        mask = np.zeros(grid.counts, dtype=bool)
        outside = set()
        last = y0.copy()

        def mark(pts):
            idx = grid.lattice_index(pts)
            ins = grid.inside(idx)
            mask[tuple(idx[ins].T)] = True
            for cell in map(tuple, idx[~ins]):
                outside.add(cell)

        def sink(rows, idx, vals):
            if rows.size == 0:
                return
            order = np.lexsort((idx, rows))
            rows, vals = rows[order], vals[order]
            # a row's samples from one step form a chain starting at its previous sample
            prev = last[rows]
            chained = np.flatnonzero(np.r_[False, rows[1:] == rows[:-1]])
            prev[chained] = vals[chained - 1]
            seg = np.max(np.abs(vals - prev) / grid.width, axis=1)
            nsub = np.maximum(np.ceil(seg / 0.25).astype(int), 1)
            rep = np.repeat(np.arange(rows.size), nsub)
            frac = (np.arange(rep.size) - np.repeat(np.cumsum(nsub) - nsub, nsub) + 1) / nsub[rep]
            mark(prev[rep] + frac[:, None] * (vals - prev)[rep])
            ends = np.r_[rows[1:] != rows[:-1], True]
            last[rows[ends]] = vals[ends]

        mark(y0)
        res = integrate_batch(lambda yy, r: nl.field(yy, w[r]), y0, opts.horizon, opts,
                              on_samples=sink, targets=tgt)
        settled = res.status == SETTLED
        mark(tgt[settled])
        unfinished = int(np.sum((res.status != FINISHED) & ~settled))
        return mask, outside, unfinished

    parts = [slice(a, min(a + batch, i0.size)) for a in range(0, i0.size, batch)]
    with ThreadPoolExecutor(max_workers=worker_count()) as ex:
        outs = list(ex.map(run, parts))
    mask = np.zeros(grid.counts, dtype=bool)
    outside, unfinished = set(), 0
    for m, o, u in outs:
        mask |= m
        outside |= o
        unfinished += u
    return ReachResult(GridSet(grid, mask), len(outside), int(i0.size), unfinished)


# -- alpha sweep ----------------------------------------------------------------------


@dataclass
class AlphaSweepRow:
    alpha: float
    S_hat_cells: int
    Xi_bar_cells: int
    R_cells: int
    R_subset_of_S_hat: bool
    violation_cells: int
    R_minus_S_hat_cells: int
    masks: dict = field(default_factory=dict, repr=False)

    def to_dict(self):
        return {
            "alpha": self.alpha, "S_hat_cells": self.S_hat_cells, "Xi_bar_cells": self.Xi_bar_cells,
            "R_cells": self.R_cells, "R_subset_of_S_hat": self.R_subset_of_S_hat,
            "violation_cells": self.violation_cells, "R_minus_S_hat_cells": self.R_minus_S_hat_cells,
        }


def alpha_sweep(alphas, w_box: Box, grid: GridSpec, X, nl: NlClosedLoop, w_counts=(21, 41),
                r_counts=(5, 9), margin=0.0, opts: SimOptions = SimOptions()):
    """For each ``alpha`` compare the simulated reachable cells with the guaranteed-decrease cells.

    ``S_hat`` and ``Xi_bar`` use the ``w_counts`` node grid over
    ``alpha * w_box``; the reachable set uses the coarser ``r_counts`` grid
    (every start paired with every input), which keeps the number of runs
    manageable.
    """
    rows = []
    for alpha in alphas:
        alpha = float(alpha)
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
        box = w_box.scaled(alpha)
        W = np.unique(w_grid(box, w_counts), axis=0)
        Wr = np.unique(w_grid(box, r_counts), axis=0)
        xb = equilibria(W, nl, grid.box)[0]
        s_hat = compute_Shat(W, grid, X, nl, margin, xi_bars=xb)
        xi_bar = compute_XiBar(W, grid, nl, xi_bars=xb)
        reach = compute_R(Wr, Wr, grid, nl, opts)
        outside = reach.cells.mask & ~s_hat.mask
        rows.append(AlphaSweepRow(alpha, s_hat.count, xi_bar.count, reach.cells.count,
                                  not outside.any() and reach.violation_cells == 0 and reach.unfinished_runs == 0,
                                  reach.violation_cells, int(outside.sum()),
                                  {"S_hat": s_hat, "Xi_bar": xi_bar, "R": reach.cells}))
        log.info("alpha=%.2f  S_hat=%d  R=%d  R-S_hat=%d", alpha, s_hat.count, reach.cells.count, outside.sum())
    return rows
