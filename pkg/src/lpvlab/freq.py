"""Frequency responses of the LTI systems obtained by freezing the scheduling variable."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import matlib
from .lpvmodel import AffineLpvSS, TransferFunction, eval_matrices

__all__ = ["LtiSS", "freeze", "magnitude_response", "dc_gain", "default_omegas", "inverse_weight_db"]


@dataclass(frozen=True)
class LtiSS:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        a, b, c, d = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (self.A, self.B, self.C, self.D))
        n = a.shape[0] if a.size else 0
        a = a.reshape(n, n)
        b = b.reshape(n, -1) if n else np.zeros((0, d.shape[1]))
        c = c.reshape(-1, n) if n else np.zeros((d.shape[0], 0))
        if b.shape[1] != d.shape[1] or c.shape[0] != d.shape[0]:
            raise ValueError(f"inconsistent dimensions B{b.shape} C{c.shape} D{d.shape}")
        for name, m in zip("ABCD", (a, b, c, d)):
            object.__setattr__(self, name, m)

    @property
    def n(self):
        return self.A.shape[0]


def freeze(clp: AffineLpvSS | LtiSS, rho=None, check=True) -> LtiSS:
    """The LTI system at the constant scheduling value ``rho``; an :class:`LtiSS` is returned as is."""
    if isinstance(clp, LtiSS):
        return clp
    return LtiSS(*eval_matrices(clp, rho, check))


def default_omegas(n=400, lo=1e-4, hi=1e3):
    return np.logspace(np.log10(lo), np.log10(hi), n)


def _response(sys: LtiSS, channel, omega):
    i, o = channel
    if sys.n == 0:
        return complex(sys.D[o, i])
    res = matlib.complex_resolvent(sys.A, omega)
    return complex(sys.C[o] @ res @ sys.B[:, i] + sys.D[o, i])


def magnitude_response(sys: LtiSS, channel, omegas):
    """``20 log10 |G(j omega)|`` for the ``(input, output)`` channel.

    Frequencies where ``j omega I - A`` is singular give NaN rather than an
    exception, so one resonance does not hide the rest of the curve.
    """
    out = np.empty(len(np.atleast_1d(omegas)))
    for k, w in enumerate(np.atleast_1d(omegas)):
        try:
            g = _response(sys, channel, float(w))
        except matlib.SingularMatrixError:
            out[k] = np.nan
            continue
        out[k] = 20.0 * np.log10(abs(g)) if g != 0 else -np.inf
    return out


def dc_gain(sys: LtiSS, channel):
    """``D - C A^-1 B`` at the channel; a singular ``A`` gives a signed infinity."""
    i, o = channel
    if sys.n == 0:
        return float(sys.D[o, i])
    try:
        x = matlib.solve(sys.A, sys.B[:, [i]])
    except matlib.SingularMatrixError:
        # pure integration: the sign of G(s) as s -> 0+ along the real axis
        eps = 1e-9 * (1.0 + np.abs(sys.A).max())
        probe = float(sys.C[o] @ np.linalg.lstsq(eps * np.eye(sys.n) - sys.A, sys.B[:, i], rcond=None)[0] + sys.D[o, i])
        return float(np.copysign(np.inf, probe if probe != 0 else 1.0))
    return float(sys.D[o, i] - sys.C[o] @ x[:, 0])


def inverse_weight_db(omegas, w_out: TransferFunction, w_in: TransferFunction):
    """``-20 log10 |W_out(j omega) W_in(j omega)|``: the bound a weighted channel must stay under."""
    s = 1j * np.asarray(omegas, dtype=float)
    return -20.0 * np.log10(np.abs(w_out(s) * w_in(s)))
