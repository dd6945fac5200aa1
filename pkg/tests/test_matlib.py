import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lpvlab import matlib

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def sym_matrices(max_n=8):
    return st.integers(1, max_n).flatmap(
        lambda n: arrays(float, (n, n), elements=finite).map(lambda m: 0.5 * (m + m.T)))


@given(sym_matrices())
@settings(max_examples=200, deadline=None)
def test_sym_eig_matches_lapack(m):
    vals, vecs = matlib.sym_eig(m)
    ref = np.linalg.eigvalsh(m)
    scale = 1.0 + np.abs(m).max()
    assert np.all(np.diff(vals) >= 0)
    np.testing.assert_allclose(vals, ref, atol=1e-9 * scale)
    np.testing.assert_allclose(vecs @ np.diag(vals) @ vecs.T, m, atol=1e-9 * scale)


@given(sym_matrices())
@settings(max_examples=200, deadline=None)
def test_sym_eig_trace_and_determinant(m):
    vals, _ = matlib.sym_eig(m)
    scale = 1.0 + np.abs(m).sum()
    assert abs(vals.sum() - np.trace(m)) <= 1e-9 * scale
    if m.shape[0] <= 3:
        assert abs(np.prod(vals) - np.linalg.det(m)) <= 1e-9 * scale ** m.shape[0]


def test_sym_eig_known_values():
    vals, _ = matlib.sym_eig(np.array([[2.0, 1.0], [1.0, 2.0]]))
    np.testing.assert_allclose(vals, [1.0, 3.0], atol=1e-14)
    vals, _ = matlib.sym_eig(np.diag([3.0, -1.0, 2.0]))
    np.testing.assert_array_equal(vals, [-1.0, 2.0, 3.0])


def test_sym_eig_rejects_non_square():
    with pytest.raises(ValueError):
        matlib.sym_eig(np.zeros((2, 3)))


def test_is_neg_def_on_example_vertices(clp, reference_x):
    from lpvlab.lpvmodel import eval_matrices

    for rho in (0.0, 9.0):
        a = eval_matrices(clp, [rho])[0]
        q = a.T @ reference_x + reference_x @ a
        # 2x2 oracle: negative definite iff trace < 0 and det > 0
        assert np.trace(q) < 0 and np.linalg.det(q) > 0
        assert matlib.is_neg_def(q)
    assert not matlib.is_neg_def(np.diag([-1.0, 0.0]))
    assert matlib.is_neg_def(np.diag([-1.0, -2.0]), margin=0.5)
    assert not matlib.is_neg_def(np.diag([-1.0, -2.0]), margin=1.5)


def test_cholesky_examples():
    np.testing.assert_array_equal(matlib.cholesky(np.eye(3)), np.eye(3))
    L = matlib.cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]))
    np.testing.assert_allclose(L, [[2.0, 0.0], [1.0, np.sqrt(2.0)]], atol=1e-15)
    assert matlib.cholesky(np.array([[1.0, 2.0], [2.0, 1.0]])) is None


def test_cholesky_agrees_with_eigenvalues():
    rng = np.random.default_rng(7)
    checked = 0
    for _ in range(1000):
        n = rng.integers(1, 7)
        m = rng.normal(size=(n, n))
        m = m @ m.T - rng.uniform(0, 2) * np.eye(n)
        lo = matlib.sym_eig(m)[0][0]
        if abs(lo) <= 1e-8:
            continue
        checked += 1
        L = matlib.cholesky(m)
        assert (L is not None) == (lo > 0)
        if L is not None:
            assert np.linalg.norm(L @ L.T - m) <= 1e-10 * np.linalg.norm(m)
    assert checked > 900


def test_solve_residuals():
    b = np.array([[1.0], [2.0], [3.0]])
    np.testing.assert_array_equal(matlib.solve(np.eye(3), b), b)
    np.testing.assert_allclose(matlib.solve(np.diag([2.0, 4.0, 8.0]), b)[:, 0], [0.5, 0.5, 0.375])
    rng = np.random.default_rng(3)
    for _ in range(200):
        a = rng.normal(size=(3, 3))
        if np.linalg.cond(a) > 1e6:
            continue
        rhs = rng.normal(size=(3, 2))
        x = matlib.solve(a, rhs)
        assert np.linalg.norm(a @ x - rhs) <= 1e-9 * (1 + np.linalg.norm(rhs))


def test_solve_singular():
    with pytest.raises(matlib.SingularMatrixError):
        matlib.solve(np.array([[1.0, 2.0], [2.0, 4.0]]), np.ones(2))


def test_complex_resolvent():
    np.testing.assert_allclose(matlib.complex_resolvent(np.array([[-1.0]]), 0.0), [[1.0]])
    np.testing.assert_allclose(matlib.complex_resolvent(np.array([[-1.0]]), 1.0), [[1 / (1 + 1j)]])
    with pytest.raises(matlib.SingularMatrixError):
        matlib.complex_resolvent(np.array([[0.0]]), 0.0)
    a = np.array([[-2.0, 5.0], [-1.0, 0.0]])
    r = matlib.complex_resolvent(a, 0.7)
    np.testing.assert_allclose((0.7j * np.eye(2) - a) @ r, np.eye(2), atol=1e-9)
