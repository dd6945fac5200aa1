import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lpvlab import freq
from lpvlab.lpvmodel import (AffineLpvSS, Box, ModelError, NlClosedLoop, OutOfSetError, SchedulingMap,
                             TransferFunction, augment_weights, eval_matrices, interconnect, parse_wiring,
                             substitute_scheduling, vertices)

from conftest import closed_form_equilibrium

P9 = Box.from_intervals([[0.0, 9.0]])
unit = st.floats(0.0, 1.0)


def test_example_closed_loop_matrices(clp):
    a0, b0, c0, d0 = eval_matrices(clp, [0.0])
    np.testing.assert_array_equal(a0, [[-2.0, 5.0], [-1.0, 0.0]])
    np.testing.assert_array_equal(eval_matrices(clp, [9.0])[0], [[-11.0, 23.0], [-1.0, 0.0]])
    for rho in (0.0, 3.0, 9.0):
        a, b, c, d = eval_matrices(clp, [rho])
        np.testing.assert_allclose(a, [[-(2 + rho), 5 + 2 * rho], [-1, 0]], atol=1e-15)
        np.testing.assert_array_equal(b, [[1, 1], [1, 0]])
        np.testing.assert_array_equal(c, [[-1, 0]])
        np.testing.assert_array_equal(d, [[1, 0]])
    assert clp.states == ("x", "x_c")
    assert clp.inputs == ("r", "d") and clp.outputs == ("e",)


def test_eval_at_zero_returns_constant_terms(clp):
    for got, stack in zip(eval_matrices(clp, [0.0]), (clp.A, clp.B, clp.C, clp.D)):
        np.testing.assert_array_equal(got, stack[0])


def test_out_of_set(clp):
    with pytest.raises(OutOfSetError):
        eval_matrices(clp, [9.5])
    eval_matrices(clp, [9.0 + 5e-10])
    a = eval_matrices(clp, [12.0], check=False)[0]
    assert a[0, 0] == -14.0


@given(unit, unit, unit)
def test_affinity(r1, r2, lam):
    rng = np.random.default_rng(0)
    P = Box.from_intervals([[-1.0, 2.0], [0.0, 5.0]])
    m = AffineLpvSS(rng.normal(size=(3, 3, 3)), rng.normal(size=(3, 3, 2)), rng.normal(size=(3, 1, 3)),
                    rng.normal(size=(3, 1, 2)), P)
    p1 = P.lower + r1 * (P.upper - P.lower)
    p2 = P.lower + r2 * (P.upper - P.lower)
    mix = eval_matrices(m, lam * p1 + (1 - lam) * p2)
    for got, e1, e2 in zip(mix, eval_matrices(m, p1), eval_matrices(m, p2)):
        np.testing.assert_allclose(got, lam * e1 + (1 - lam) * e2, atol=1e-12)


def test_vertices():
    assert [v.tolist() for v in vertices(P9)] == [[0.0], [9.0]]
    sq = vertices(Box.from_intervals([[0, 1], [0, 1]]))
    assert [v.tolist() for v in sq] == [[0, 0], [0, 1], [1, 0], [1, 1]]
    assert len(vertices(Box.from_intervals([[2.0, 2.0]]))) == 1


def test_box_validation():
    with pytest.raises(ValueError):
        Box.from_intervals([[1.0, 0.0]])
    with pytest.raises(ValueError):
        Box.from_intervals([[0.0, np.inf]])


def test_parse_wiring():
    assert parse_wiring(["e = r - y", "u = 2*a + 0.5 b"]) == {"e": {"r": 1.0, "y": -1.0},
                                                              "u": {"a": 2.0, "b": 0.5}}
    for bad in (["e r - y"], ["e = r y"], ["e = r", "e = y"], ["1e = r"]):
        with pytest.raises(ModelError):
            parse_wiring(bad)


def _scalar(a, b, c, d, states=("x",), inputs=("u",), outputs=("y",), P=P9):
    return AffineLpvSS(a, b, c, d, P, states, inputs, outputs)


def test_unit_feedback_around_integrator():
    plant = _scalar([[0.0]], [[1.0]], [[1.0]], [[0.0]])
    gain = AffineLpvSS(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[1.0]], P9, (), ("u_c",), ("y_c",))
    cl = interconnect(plant, gain, ["u = y_c", "u_c = r - y"], ["r"], ["y"])
    np.testing.assert_array_equal(eval_matrices(cl, [0.0])[0], [[-1.0]])


def test_zero_controller_leaves_plant():
    plant = AffineLpvSS([[[-1.0, 0.5], [0.0, -2.0]], [[-1.0, 0], [0, 0]]], [[[1.0, 0.0], [0.0, 1.0]]],
                        [[[1.0, 1.0]]], [[[0.0, 0.0]]], P9, ("x1", "x2"), ("w", "u"), ("y",))
    zero = AffineLpvSS(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[0.0]], P9, (), ("u_c",), ("y_c",))
    cl = interconnect(plant, zero, ["u = y_c", "u_c = y"], ["w"], ["y"])
    for rho in (0.0, 4.0, 9.0):
        a, b, c, d = eval_matrices(plant, [rho])
        ca, cb, cc, cd = eval_matrices(cl, [rho])
        np.testing.assert_array_equal(ca, a)
        np.testing.assert_array_equal(cb, b[:, :1])
        np.testing.assert_array_equal(cc, c)


def test_interconnect_rejects_bad_loops():
    plant = _scalar([[-1.0]], [[1.0]], [[1.0]], [[1.0]])
    ctrl = AffineLpvSS(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[1.0]], P9, (), ("u_c",), ("y_c",))
    # y = x + u and u = y: I - D L is singular
    with pytest.raises(ModelError):
        interconnect(plant, ctrl, ["u = y_c", "u_c = y"], [], ["y"])
    # rho in both the plant input matrix and the controller output produces a rho^2 term
    plant2 = _scalar([[-1.0]], [[[1.0]], [[1.0]]], [[1.0]], [[0.0]])
    ctrl2 = AffineLpvSS([[0.0]], [[1.0]], [[[1.0]], [[1.0]]], [[0.0]], P9, ("xc",), ("u_c",), ("y_c",))
    with pytest.raises(ModelError, match="affine"):
        interconnect(plant2, ctrl2, ["u = y_c", "u_c = y"], [], ["y"])
    with pytest.raises(ModelError):
        interconnect(plant, ctrl, ["u = y_c", "u_c = q"], [], ["y"])


def _frozen_loop(pa, pb, pc, pd, ka, kb, kc, kd, nw):
    """Hand-written LTI feedback u = y_c, u_c = y for a plant with no u -> y feedthrough."""
    bw, bu = pb[:, :nw], pb[:, nw:]
    cz, cy = pc[:1], pc[1:]
    dzw, dzu, dyw = pd[:1, :nw], pd[:1, nw:], pd[1:, :nw]
    a = np.block([[pa + bu @ kd @ cy, bu @ kc], [kb @ cy, ka]])
    b = np.vstack([bw + bu @ kd @ dyw, kb @ dyw])
    c = np.hstack([cz + dzu @ kd @ cy, dzu @ kc])
    d = dzw + dzu @ kd @ dyw
    return a, b, c, d


def test_interconnect_matches_frozen_lti():
    rng = np.random.default_rng(11)
    P = Box.from_intervals([[-1.0, 1.0]])
    n, nc, nw = 2, 2, 2
    pa = rng.normal(size=(2, n, n))
    pb = np.concatenate([rng.normal(size=(2, n, nw)), np.broadcast_to(rng.normal(size=(1, n, 1)), (2, n, 1))],
                        axis=2)
    pb[1, :, nw:] = 0.0  # the u column is rho-free
    pc = np.concatenate([rng.normal(size=(1, 1, n)), rng.normal(size=(1, 1, n))], axis=1).repeat(2, axis=0)
    pc[1] = 0.0
    pd = np.zeros((2, 2, nw + 1))
    pd[0, 0, :] = rng.normal(size=nw + 1)
    pd[0, 1, :nw] = rng.normal(size=nw)
    plant = AffineLpvSS(pa, pb, pc, pd, P, ("x1", "x2"), ("w1", "w2", "u"), ("z", "y"))
    ctrl = AffineLpvSS(rng.normal(size=(2, nc, nc)), rng.normal(size=(2, nc, 1)), rng.normal(size=(2, 1, nc)),
                       [[[0.7]], [[0.0]]], P, ("k1", "k2"), ("u_c",), ("y_c",))
    cl = interconnect(plant, ctrl, ["u = y_c", "u_c = y"], ["w1", "w2"], ["z"])
    for rho in rng.uniform(-1, 1, size=100):
        want = _frozen_loop(*eval_matrices(plant, [rho]), *eval_matrices(ctrl, [rho]), nw)
        for got, w in zip(eval_matrices(cl, [rho]), want):
            np.testing.assert_allclose(got, w, atol=1e-12)


def test_transfer_function():
    w = TransferFunction((0.14, 0.14), (1.0, 1e-7))
    assert w.order == 1
    assert w(0.0) == pytest.approx(0.14 / 1e-7)
    assert TransferFunction.gain(8).order == 0
    with pytest.raises(ModelError):
        TransferFunction((1.0, 0.0), (1.0,))
    with pytest.raises(ModelError):
        TransferFunction((1.0,), (0.0,))
    a, b, c, d = w.realize()
    s = 2.5j
    assert (c @ np.linalg.solve(s * np.eye(1) - a, b) + d)[0, 0] == pytest.approx(w(s))


def test_weighted_example_matrices(cfg):
    wcl = cfg.weighted()
    assert wcl.n_x == 3
    a0, b0, c0, d0 = eval_matrices(wcl, [0.0])
    np.testing.assert_allclose(a0, [[-2, 5, 0], [-1, 0, 0], [-1, 0, -1e-7]], atol=1e-15)
    np.testing.assert_allclose(b0, [[1.5, 8], [1.5, 0], [1.5, 0]], atol=1e-15)
    np.testing.assert_allclose(c0, [[-0.14, 0, 0.14 * (1 - 1e-7)]], atol=1e-15)
    np.testing.assert_allclose(d0, [[0.21, 0]], atol=1e-15)


def test_unit_weights_leave_model_unchanged(clp):
    one = TransferFunction.gain(1.0)
    same = augment_weights(clp, [one, one], [one])
    for a, b in zip((same.A, same.B, same.C, same.D), (clp.A, clp.B, clp.C, clp.D)):
        np.testing.assert_array_equal(a, b)


def test_static_weights_scale_columns_and_rows(clp):
    wcl = augment_weights(clp, [TransferFunction.gain(2.0), TransferFunction.gain(-3.0)],
                          [TransferFunction.gain(0.5)])
    np.testing.assert_allclose(wcl.B, clp.B * np.array([2.0, -3.0]))
    np.testing.assert_allclose(wcl.C, 0.5 * clp.C)
    np.testing.assert_allclose(wcl.D, 0.5 * clp.D * np.array([2.0, -3.0]))
    np.testing.assert_array_equal(wcl.A, clp.A)


def test_weighted_frequency_response(cfg):
    wcl = cfg.weighted()
    omegas = np.logspace(-3, 3, 50)
    for rho in (0.0, 4.5, 9.0):
        plain = freq.freeze(cfg.clp, [rho])
        weighted = freq.freeze(wcl, [rho])
        for i, w_in in enumerate(cfg.input_weights):
            for w in omegas:
                t = freq._response(plain, (i, 0), w)
                want = cfg.output_weights[0](1j * w) * t * w_in(1j * w)
                assert abs(freq._response(weighted, (i, 0), w) - want) <= 1e-8 * (1 + abs(want))


def test_improper_weight_rejected(clp):
    with pytest.raises(ModelError):
        augment_weights(clp, [TransferFunction.gain(1.0)], [TransferFunction.gain(1.0)])


def test_scheduling_map():
    mu = SchedulingMap((((1.0, (2,)),),), (0,))
    np.testing.assert_array_equal(mu(np.array([3.0, 1.0])), [9.0])
    np.testing.assert_array_equal(mu(np.array([[1.0, 0.0], [-2.0, 5.0]])), [[1.0], [4.0]])
    np.testing.assert_array_equal(mu.jacobian(np.array([3.0, 1.0]), 2), [[6.0, 0.0]])
    mixed = SchedulingMap((((2.0, (1, 1)), (1.0, (0, 0))),), (0, 1))
    assert mixed(np.array([2.0, 3.0]))[0] == 13.0
    with pytest.raises(ModelError):
        SchedulingMap(((),), (0,))
    with pytest.raises(ModelError):
        SchedulingMap((((1.0, (-1,)),),), (0,))


def test_vector_field_examples(nl):
    np.testing.assert_array_equal(nl.field(np.zeros(2), np.zeros(2)), [0.0, 0.0])
    np.testing.assert_array_equal(nl.field(np.array([1.0, 0.0]), np.zeros(2)), [-3.0, -1.0])
    for r, d in [(0.5, 0.0), (0.5, -8.0), (-1.3, 4.0)]:
        xi = closed_form_equilibrium(r, d)
        assert np.abs(nl.field(xi, np.array([r, d]))).max() <= 1e-12


def test_substitution_is_consistent(nl):
    rng = np.random.default_rng(5)
    xi = rng.uniform(-3, 3, size=(500, 2))
    w = rng.uniform(-8, 8, size=(500, 2))
    f = nl.field(xi, w)
    z = nl.output(xi, w)
    for k in range(500):
        a, b, c, d = eval_matrices(nl.clp, nl.rho(xi[k], w[k]), check=False)
        np.testing.assert_allclose(f[k], a @ xi[k] + b @ w[k], rtol=1e-13, atol=1e-13)
        np.testing.assert_allclose(z[k], c @ xi[k] + d @ w[k], rtol=1e-13, atol=1e-13)


def test_field_jacobian_matches_finite_differences(nl):
    rng = np.random.default_rng(9)
    for _ in range(20):
        xi, w = rng.uniform(-2, 2, size=2), rng.uniform(-5, 5, size=2)
        jac = nl.field_jacobian(xi, w)
        h = 1e-6
        fd = np.column_stack([(nl.field(xi + h * e, w) - nl.field(xi - h * e, w)) / (2 * h) for e in np.eye(2)])
        np.testing.assert_allclose(jac, fd, atol=1e-6)


def test_scheduling_map_dimension_checks(clp):
    with pytest.raises(ModelError):
        substitute_scheduling(clp, SchedulingMap((((1.0, (2,)),),), (5,)))
    with pytest.raises(ModelError):
        NlClosedLoop(clp, SchedulingMap((((1.0, (2,)),), ((1.0, (1,)),)), (0,)))
    by_input = substitute_scheduling(clp, SchedulingMap((((1.0, (2,)),),), (1,), source="input"))
    assert by_input.rho(np.zeros(2), np.array([0.0, 3.0]))[0] == 9.0
