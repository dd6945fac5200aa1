"""Small dense linear algebra used by the LMI solver and the Lyapunov analysis.

Matrices are plain ``numpy.ndarray`` objects. Everything here is meant for
dimensions up to a dozen or so; nothing is tuned for large problems.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ConvergenceError",
    "SingularMatrixError",
    "sym_eig",
    "is_neg_def",
    "cholesky",
    "solve",
    "complex_resolvent",
    "symmetrize",
]

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


class ConvergenceError(RuntimeError):
    """An iterative routine hit its iteration cap."""


class SingularMatrixError(np.linalg.LinAlgError):
    """A matrix that must be inverted is singular to working tolerance."""


def symmetrize(m):
    m = np.asarray(m, dtype=float)
    return 0.5 * (m + m.T)


def _check_square(m, name="matrix"):
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")


def _off_norm(a):
    return float(np.linalg.norm(a - np.diag(np.diag(a))))


def sym_eig(m, tol=JACOBI_TOL, max_sweeps=JACOBI_MAX_SWEEPS):
    """Eigendecomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Returns ``(w, v)`` with ``w`` ascending and ``v`` orthonormal so that
    ``v @ diag(w) @ v.T`` reproduces ``m``.

    Sweeps stop once the off-diagonal Frobenius norm drops below
    ``tol * (1 + ||m||_F)``. Raises :class:`ConvergenceError` after
    ``max_sweeps`` sweeps.
    """
    a = np.array(m, dtype=float)
    _check_square(a)
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-12 * (1.0 + np.abs(a).max(initial=0.0))):
        raise ValueError("sym_eig needs a symmetric matrix")
    a = symmetrize(a)
    n = a.shape[0]
    v = np.eye(n)
    if n == 0:
        return np.zeros(0), v
    thresh = tol * (1.0 + np.linalg.norm(a))

    for _ in range(max_sweeps):
        off = _off_norm(a)
        if off <= thresh:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                # rotation angle zeroing a[p, q] (Golub & Van Loan, sym.schur2)
                if abs(apq) < 1e-300:
                    a[p, q] = a[q, p] = 0.0
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(tau) / (abs(tau) + np.hypot(1.0, tau)) if tau != 0.0 else 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        off = _off_norm(a)
        if off > thresh:
            raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps (off={off:.3e})")

    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def is_neg_def(m, margin=0.0):
    """True iff the largest eigenvalue of the symmetric ``m`` is at most ``-margin``.

    With ``margin == 0`` the test is strict: a singular matrix is rejected.
    """
    w, _ = sym_eig(m)
    if margin == 0.0:
        return bool(w[-1] < 0.0)
    return bool(w[-1] <= -margin)


def cholesky(m):
    """Lower-triangular ``L`` with ``L @ L.T == m``, or ``None`` if ``m`` is not positive definite."""
    a = np.asarray(m, dtype=float)
    _check_square(a)
    try:
        return np.linalg.cholesky(symmetrize(a))
    except np.linalg.LinAlgError:
        return None


def solve(a, b, rcond=1e-13):
    """Solve ``a @ x = b``; raises :class:`SingularMatrixError` when ``a`` is numerically singular."""
    a = np.asarray(a)
    b = np.asarray(b)
    _check_square(a, "a")
    if a.shape[0] == 0:
        return np.zeros_like(b, dtype=np.result_type(a, b, float))
    s = np.linalg.svd(a, compute_uv=False)
    if s[-1] <= rcond * s[0] or s[0] == 0.0:
        raise SingularMatrixError(f"matrix singular to tolerance (smallest singular value {s[-1]:.3e})")
    return np.linalg.solve(a, b)


def complex_resolvent(a, omega):
    """``(j*omega*I - a)^-1`` for a real square ``a``."""
    a = np.asarray(a, dtype=float)
    _check_square(a)
    n = a.shape[0]
    return solve(1j * omega * np.eye(n) - a, np.eye(n, dtype=complex))
