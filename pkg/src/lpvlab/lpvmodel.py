"""Affine LPV state-space models, scheduling maps and their interconnection.

A model ``M(rho) = M0 + sum_i rho_i M_i`` is stored as a coefficient stack of
shape ``(1 + n_rho, rows, cols)``. Signals carry names so that feedback
wiring can be written as equations such as ``"e = r - y"``.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

__all__ = [
    "Box",
    "OutOfSetError",
    "ModelError",
    "TransferFunction",
    "AffineLpvSS",
    "SchedulingMap",
    "NlClosedLoop",
    "vertices",
    "eval_matrices",
    "interconnect",
    "augment_weights",
    "substitute_scheduling",
    "parse_wiring",
]

BOX_TOL = 1e-9
AFFINE_TOL = 1e-12  # relative size of a quadratic rho term that counts as nonzero


class OutOfSetError(ValueError):
    """A scheduling value lies outside the model's box."""


class ModelError(ValueError):
    """Inconsistent dimensions, ill-posed feedback or a non-affine interconnection."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``[lower_i, upper_i]``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ModelError("box bounds must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ModelError("box must be bounded")
        if np.any(lo > hi):
            raise ModelError(f"empty box: lower {lo} exceeds upper {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def from_intervals(cls, intervals):
        iv = np.asarray(intervals, dtype=float).reshape(-1, 2)
        return cls(iv[:, 0], iv[:, 1])

    @property
    def dim(self):
        return self.lower.size

    def contains(self, p, tol=BOX_TOL):
        """Elementwise membership over the last axis of ``p``."""
        p = np.asarray(p, dtype=float)
        return np.all((p >= self.lower - tol) & (p <= self.upper + tol), axis=-1)

    def scaled(self, alpha):
        return Box(alpha * self.lower, alpha * self.upper)

    def to_list(self):
        return [[float(a), float(b)] for a, b in zip(self.lower, self.upper)]


def vertices(box: Box):
    """Corners of ``box`` in lexicographic order; degenerate axes contribute one value."""
    axes = [sorted({float(a), float(b)}) for a, b in zip(box.lower, box.upper)]
    return [np.array(v) for v in itertools.product(*axes)]


@dataclass(frozen=True)
class TransferFunction:
    """SISO rational function with coefficients in descending powers of ``s``."""

    num: tuple
    den: tuple

    def __post_init__(self):
        num = np.trim_zeros(np.atleast_1d(np.asarray(self.num, dtype=float)), "f")
        den = np.trim_zeros(np.atleast_1d(np.asarray(self.den, dtype=float)), "f")
        if den.size == 0:
            raise ModelError("transfer function denominator is zero")
        if num.size == 0:
            num = np.zeros(1)
        if num.size > den.size:
            raise ModelError(f"improper transfer function: num degree {num.size - 1} > den degree {den.size - 1}")
        object.__setattr__(self, "num", tuple(num.tolist()))
        object.__setattr__(self, "den", tuple(den.tolist()))

    @classmethod
    def gain(cls, k):
        return cls((float(k),), (1.0,))

    @property
    def order(self):
        return len(self.den) - 1

    def __call__(self, s):
        return np.polyval(self.num, s) / np.polyval(self.den, s)

    def realize(self):
        """Controllable-canonical ``(A, B, C, D)``."""
        if self.order == 0:
            return np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), np.array([[self.num[-1] / self.den[0]]])
        a, b, c, d = signal.tf2ss(self.num, self.den)
        return np.atleast_2d(a), np.atleast_2d(b), np.atleast_2d(c), np.atleast_2d(d)


def _stack(m, n_rho):
    """Coerce a matrix or a list of coefficient matrices to a ``(1 + n_rho, r, c)`` stack."""
    arr = np.asarray(m, dtype=float)
    if arr.ndim == 2:
        out = np.zeros((1 + n_rho,) + arr.shape)
        out[0] = arr
        return out
    if arr.ndim == 3 and arr.shape[0] <= 1 + n_rho:
        out = np.zeros((1 + n_rho,) + arr.shape[1:])
        out[: arr.shape[0]] = arr
        return out
    raise ModelError(f"cannot read coefficient stack of shape {arr.shape} for {n_rho} scheduling variables")


@dataclass(frozen=True)
class AffineLpvSS:
    """``xdot = A(rho) x + B(rho) w``, ``z = C(rho) x + D(rho) w`` with ``rho`` in ``P``.

    ``A, B, C, D`` are coefficient stacks (index 0 is the constant term).
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    P: Box
    states: tuple = ()
    inputs: tuple = ()
    outputs: tuple = ()

    def __post_init__(self):
        k = 1 + self.P.dim
        a, b, c, d = (_stack(m, self.P.dim) for m in (self.A, self.B, self.C, self.D))
        n = a.shape[1]
        if a.shape[1:] != (n, n):
            raise ModelError(f"A must be square, got {a.shape[1:]}")
        m, p = b.shape[2], c.shape[1]
        if b.shape[1] != n or c.shape[2] != n or d.shape[1:] != (p, m):
            raise ModelError(f"inconsistent dimensions A{a.shape[1:]} B{b.shape[1:]} C{c.shape[1:]} D{d.shape[1:]}")
        for name, arr in zip("ABCD", (a, b, c, d)):
            if arr.shape[0] != k or not np.all(np.isfinite(arr)):
                raise ModelError(f"{name} has non-finite entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        states = tuple(self.states) or tuple(f"x{i + 1}" for i in range(n))
        inputs = tuple(self.inputs) or tuple(f"w{i + 1}" for i in range(m))
        outputs = tuple(self.outputs) or tuple(f"z{i + 1}" for i in range(p))
        if (len(states), len(inputs), len(outputs)) != (n, m, p):
            raise ModelError("signal name lists do not match the matrix dimensions")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "outputs", outputs)

    @property
    def n_x(self):
        return self.A.shape[1]

    @property
    def n_w(self):
        return self.B.shape[2]

    @property
    def n_z(self):
        return self.C.shape[1]

    @property
    def n_rho(self):
        return self.P.dim

    def eval_matrices(self, rho, check=True):
        return eval_matrices(self, rho, check)

    def is_constant(self):
        return not any(np.any(m[1:]) for m in (self.A, self.B, self.C, self.D))

    def to_dict(self):
        return {
            "A": self.A.tolist(), "B": self.B.tolist(), "C": self.C.tolist(), "D": self.D.tolist(),
            "P": self.P.to_list(), "states": list(self.states), "inputs": list(self.inputs),
            "outputs": list(self.outputs),
        }


def _rho_vector(m: AffineLpvSS, rho, check):
    r = np.atleast_1d(np.asarray(rho, dtype=float))
    if r.shape != (m.n_rho,):
        raise ModelError(f"rho must have {m.n_rho} entries, got shape {r.shape}")
    if check and not m.P.contains(r):
        raise OutOfSetError(f"rho={r.tolist()} outside P={m.P.to_list()}")
    return np.concatenate(([1.0], r))


def eval_matrices(m: AffineLpvSS, rho, check=True):
    """``(A, B, C, D)`` at a frozen ``rho``; ``check=False`` skips the membership test."""
    coef = _rho_vector(m, rho, check)
    return tuple(np.tensordot(coef, s, axes=1) for s in (m.A, m.B, m.C, m.D))


# -- interconnection ------------------------------------------------------------------

_TERM = re.compile(r"\s*([+-]?)\s*(?:(\d+(?:\.\d*)?(?:[eE][+-]?\d+)?)\s*\*?\s*)?([A-Za-z_]\w*)\s*")


def parse_wiring(eqs):
    """Parse ``"lhs = a - 2*b + c"`` equations into ``{lhs: {name: coef}}``."""
    out = {}
    for eq in eqs:
        if eq.count("=") != 1:
            raise ModelError(f"wiring equation needs exactly one '=': {eq!r}")
        lhs, rhs = (s.strip() for s in eq.split("="))
        if not re.fullmatch(r"[A-Za-z_]\w*", lhs):
            raise ModelError(f"bad signal name {lhs!r}")
        if lhs in out:
            raise ModelError(f"signal {lhs!r} defined twice")
        terms, pos = {}, 0
        rhs = rhs.strip()
        while pos < len(rhs):
            mt = _TERM.match(rhs, pos)
            if mt is None or mt.end() == pos or (pos > 0 and not mt.group(1)):
                raise ModelError(f"cannot parse wiring expression {rhs!r}")
            sign = -1.0 if mt.group(1) == "-" else 1.0
            coef = float(mt.group(2)) if mt.group(2) else 1.0
            terms[mt.group(3)] = terms.get(mt.group(3), 0.0) + sign * coef
            pos = mt.end()
        if not terms:
            raise ModelError(f"empty right-hand side in {eq!r}")
        out[lhs] = terms
    return out


def _resolve(name, defs, basis, seen=()):
    """Express a signal as a coefficient dict over ``basis`` names by substituting definitions."""
    if name in basis:
        return {name: 1.0}
    if name not in defs:
        raise ModelError(f"signal {name!r} is neither an input, a block output nor defined by wiring")
    if name in seen:
        raise ModelError(f"circular wiring definition through {name!r}")
    acc = {}
    for sub, c in defs[name].items():
        for k, v in _resolve(sub, defs, basis, seen + (name,)).items():
            acc[k] = acc.get(k, 0.0) + c * v
    return acc


def _mul(a, b):
    """Product of two coefficient stacks; raises if a quadratic rho term survives."""
    k = a.shape[0]
    out = np.einsum("irs,st->irt", a, b[0])
    out[1:] += np.einsum("rs,ist->irt", a[0], b[1:])
    quad = np.einsum("irs,jst->ijrt", a[1:], b[1:])
    scale = max(1.0, float(np.abs(a).max(initial=0.0) * np.abs(b).max(initial=0.0)))
    if k > 1 and np.abs(quad).max(initial=0.0) > AFFINE_TOL * scale:
        raise ModelError("interconnection is not affine in rho (product of two scheduled blocks)")
    return out


def _blkdiag(stacks):
    k = stacks[0].shape[0]
    rows = sum(s.shape[1] for s in stacks)
    cols = sum(s.shape[2] for s in stacks)
    out = np.zeros((k, rows, cols))
    r = c = 0
    for s in stacks:
        out[:, r:r + s.shape[1], c:c + s.shape[2]] = s
        r += s.shape[1]
        c += s.shape[2]
    return out


def interconnect(plant: AffineLpvSS, controller: AffineLpvSS, wiring, inputs, outputs) -> AffineLpvSS:
    """Close the loop between two named-signal LPV blocks.

    ``wiring`` lists equations defining every block input (and any helper
    signal) in terms of the external ``inputs`` and the block outputs, for
    instance ``["u = y_c", "u_c = e", "e = r - y"]``. ``outputs`` names the
    closed-loop performance channels. Block inputs that coincide with an
    external input name are fed directly.

    The states of the result are the plant states followed by the controller
    states. The algebraic loop must not depend on ``rho``; products of two
    scheduled coefficients are rejected because the closed loop would not be
    affine.
    """
    if plant.P.dim != controller.P.dim or not (
        np.array_equal(plant.P.lower, controller.P.lower) and np.array_equal(plant.P.upper, controller.P.upper)
    ):
        raise ModelError("plant and controller must share the scheduling box")
    inputs, outputs = tuple(inputs), tuple(outputs)
    defs = parse_wiring(wiring)
    blocks = (plant, controller)
    blk_out = plant.outputs + controller.outputs
    blk_in = plant.inputs + controller.inputs
    names = list(blk_out) + list(inputs) + list(plant.states) + list(controller.states)
    if len(set(names)) != len(names):
        raise ModelError("signal names of states, block outputs and external inputs must be distinct")
    basis = set(blk_out) | set(inputs)
    for name in blk_in:
        if name in blk_out:
            raise ModelError(f"block input {name!r} clashes with a block output name")

    nv, nw = len(blk_out), len(inputs)

    def row(name):
        coefs = _resolve(name, defs, basis)
        lv = np.array([coefs.get(s, 0.0) for s in blk_out])
        lw = np.array([coefs.get(s, 0.0) for s in inputs])
        return lv, lw

    lv = np.zeros((len(blk_in), nv))
    lw = np.zeros((len(blk_in), nw))
    for i, name in enumerate(blk_in):
        lv[i], lw[i] = row(name)
    ov = np.zeros((len(outputs), nv))
    ow = np.zeros((len(outputs), nw))
    for i, name in enumerate(outputs):
        ov[i], ow[i] = row(name)

    k = 1 + plant.P.dim
    a = _blkdiag([b.A for b in blocks])
    bb = _blkdiag([b.B for b in blocks])
    c = _blkdiag([b.C for b in blocks])
    d = _blkdiag([b.D for b in blocks])

    # block outputs: v = C xi + D (Lv v + Lw w)  =>  (I - D Lv) v = C xi + D Lw w
    loop = _mul(d, _stack(lv, k - 1))
    if np.any(np.abs(loop[1:]) > AFFINE_TOL * max(1.0, float(np.abs(loop).max()))):
        raise ModelError("algebraic loop depends on rho; the closed loop would be rational")
    m = np.eye(nv) - loop[0]
    if np.linalg.svd(m, compute_uv=False)[-1] < 1e-12:
        raise ModelError("ill-posed feedback: I - D*L is singular")
    minv = _stack(np.linalg.inv(m), k - 1)
    v_xi = _mul(minv, c)
    v_w = _mul(minv, _mul(d, _stack(lw, k - 1)))
    # block inputs and closed-loop outputs as maps of (xi, w)
    in_xi = _mul(_stack(lv, k - 1), v_xi)
    in_w = _mul(_stack(lv, k - 1), v_w) + _stack(lw, k - 1)
    a_cl = a + _mul(bb, in_xi)
    b_cl = _mul(bb, in_w)
    c_cl = _mul(_stack(ov, k - 1), v_xi)
    d_cl = _mul(_stack(ov, k - 1), v_w) + _stack(ow, k - 1)
    return AffineLpvSS(a_cl, b_cl, c_cl, d_cl, plant.P,
                       plant.states + controller.states, inputs, outputs)


def augment_weights(clp: AffineLpvSS, input_weights, output_weights) -> AffineLpvSS:
    """Series connection ``W_out * clp * diag(W_in)``.

    One :class:`TransferFunction` per input and per output channel. States
    are ordered as the model states, then input-weight states, then
    output-weight states.
    """
    input_weights, output_weights = list(input_weights), list(output_weights)
    if len(input_weights) != clp.n_w or len(output_weights) != clp.n_z:
        raise ModelError(f"need {clp.n_w} input and {clp.n_z} output weights")
    k = 1 + clp.n_rho

    def diag_realization(tfs):
        parts = [tf.realize() for tf in tfs]
        return tuple(_stack(_blkdiag([_stack(p[i], 0) for p in parts])[0], k - 1) for i in range(4))

    ai, bi, ci, di = diag_realization(input_weights)
    ao, bo, co, do = diag_realization(output_weights)
    n, ni, no = clp.n_x, ai.shape[1], ao.shape[1]

    # w = Ci xi_in + Di w';  z = C xi + D w;  z' = Co xo + Do z
    a = np.zeros((k, n + ni + no, n + ni + no))
    a[:, :n, :n] = clp.A
    a[:, :n, n:n + ni] = _mul(clp.B, ci)
    a[:, n:n + ni, n:n + ni] = ai
    a[:, n + ni:, :n] = _mul(bo, clp.C)
    a[:, n + ni:, n:n + ni] = _mul(bo, _mul(clp.D, ci))
    a[:, n + ni:, n + ni:] = ao
    b = np.concatenate([_mul(clp.B, di), bi, _mul(bo, _mul(clp.D, di))], axis=1)
    c = np.concatenate([_mul(do, clp.C), _mul(do, _mul(clp.D, ci)), co], axis=2)
    d = _mul(do, _mul(clp.D, di))
    states = (clp.states + tuple(f"w_{s}_{i + 1}" for s, tf in zip(clp.inputs, input_weights) for i in range(tf.order))
              + tuple(f"w_{s}_{i + 1}" for s, tf in zip(clp.outputs, output_weights) for i in range(tf.order)))
    return AffineLpvSS(a, b, c, d, clp.P, states, clp.inputs, clp.outputs)


# -- scheduling maps ------------------------------------------------------------------


@dataclass(frozen=True)
class SchedulingMap:
    """Polynomial ``rho_k = sum_j coef_kj * prod_i v_i ** exp_kji``.

    ``terms[k]`` is a list of ``(coef, exponents)`` pairs. The map reads
    either the state (``source="state"``) or the external input
    (``source="input"``); ``indices`` selects which entries it reads.
    """

    terms: tuple
    indices: tuple
    source: str = "state"
    _coefs: list = field(init=False, repr=False, compare=False)
    _exps: list = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.source not in ("state", "input"):
            raise ModelError(f"unknown scheduling source {self.source!r}")
        idx = tuple(int(i) for i in self.indices)
        coefs, exps = [], []
        for comp in self.terms:
            if not comp:
                raise ModelError("every scheduling component needs at least one term")
            c = np.array([float(t[0]) for t in comp])
            e = np.array([list(t[1]) for t in comp], dtype=int)
            if e.shape[1] != len(idx) or np.any(e < 0):
                raise ModelError("exponents must be nonnegative integers, one per read entry")
            coefs.append(c)
            exps.append(e)
        object.__setattr__(self, "terms", tuple(tuple((float(t[0]), tuple(int(x) for x in t[1])) for t in comp)
                                                for comp in self.terms))
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "_coefs", coefs)
        object.__setattr__(self, "_exps", exps)

    @property
    def n_rho(self):
        return len(self.terms)

    def __call__(self, v):
        """Evaluate on the full state (or input) vector; batches over leading axes."""
        v = np.asarray(v, dtype=float)[..., list(self.indices)]
        out = [np.sum(c * np.prod(v[..., None, :] ** e, axis=-1), axis=-1) for c, e in zip(self._coefs, self._exps)]
        return np.stack(out, axis=-1)

    def jacobian(self, v, n_full):
        """``d rho / d v`` with shape ``(..., n_rho, n_full)``."""
        v = np.asarray(v, dtype=float)
        sel = v[..., list(self.indices)]
        jac = np.zeros(v.shape[:-1] + (self.n_rho, n_full))
        for k, (c, e) in enumerate(zip(self._coefs, self._exps)):
            for col, i in enumerate(self.indices):
                de = e.copy()
                de[:, col] = np.maximum(e[:, col] - 1, 0)
                jac[..., k, i] += np.sum(c * e[:, col] * np.prod(sel[..., None, :] ** de, axis=-1), axis=-1)
        return jac

    def to_dict(self):
        return {"terms": [[[c, list(e)] for c, e in comp] for comp in self.terms],
                "indices": list(self.indices), "source": self.source}


@dataclass(frozen=True)
class NlClosedLoop:
    """The closed loop with the scheduling map substituted back in."""

    clp: AffineLpvSS
    mu: SchedulingMap

    def __post_init__(self):
        if self.mu.n_rho != self.clp.n_rho:
            raise ModelError(f"scheduling map gives {self.mu.n_rho} values, model expects {self.clp.n_rho}")
        limit = self.clp.n_x if self.mu.source == "state" else self.clp.n_w
        if any(i < 0 or i >= limit for i in self.mu.indices):
            raise ModelError("scheduling map reads entries outside the signal it is attached to")

    @property
    def n(self):
        return self.clp.n_x

    def rho(self, xi, w):
        return self.mu(xi) if self.mu.source == "state" else self.mu(w)

    def _coef(self, xi, w):
        r = self.rho(xi, w)
        return np.concatenate([np.ones(r.shape[:-1] + (1,)), r], axis=-1)

    def field(self, xi, w):
        """``A(mu) xi + B(mu) w``, batched over leading axes."""
        xi = np.asarray(xi, dtype=float)
        w = np.asarray(w, dtype=float)
        c = self._coef(xi, w)
        ax = np.einsum("kij,...j->...ki", self.clp.A, xi)
        bw = np.einsum("kij,...j->...ki", self.clp.B, w)
        return np.einsum("...k,...ki->...i", c, ax + bw)

    def output(self, xi, w):
        xi = np.asarray(xi, dtype=float)
        w = np.asarray(w, dtype=float)
        c = self._coef(xi, w)
        cx = np.einsum("kij,...j->...ki", self.clp.C, xi)
        dw = np.einsum("kij,...j->...ki", self.clp.D, w)
        return np.einsum("...k,...ki->...i", c, cx + dw)

    def field_jacobian(self, xi, w):
        """``d field / d xi``, including the dependence through the scheduling map."""
        xi = np.asarray(xi, dtype=float)
        w = np.asarray(w, dtype=float)
        c = self._coef(xi, w)
        jac = np.einsum("...k,kij->...ij", c, self.clp.A)
        if self.mu.source == "state":
            terms = np.einsum("kij,...j->...ki", self.clp.A[1:], xi) + np.einsum("kij,...j->...ki", self.clp.B[1:], w)
            drho = self.mu.jacobian(xi, self.n)
            jac = jac + np.einsum("...ki,...kj->...ij", terms, drho)
        return jac


def substitute_scheduling(clp: AffineLpvSS, mu: SchedulingMap) -> NlClosedLoop:
    return NlClosedLoop(clp, mu)
