import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from periodnet import numcore as nc
from periodnet.numcore import Tensor

from conftest import numeric_grad, weighted_sum


def rel_err(a, b, floor=1e-6):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


# ---------------------------------------------------------------- construction


def test_tensor_rejects_nonfinite():
    with pytest.raises(nc.NumericError):
        Tensor([1.0, np.nan])
    with pytest.raises(nc.NumericError):
        Tensor([np.inf])


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_tripwire_fires_after_op():
    big = Tensor([1e308])
    with pytest.raises(nc.NumericError, match="scale"):
        nc.scale(big, 10.0)


def test_construction_copies_input():
    a = np.ones(3)
    t = Tensor(a)
    a[0] = 5.0
    assert t.data[0] == 1.0


# ---------------------------------------------------------------- matmul


def test_matmul_identity():
    out = nc.matmul(Tensor(np.eye(2)), Tensor([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])


def test_matmul_zero():
    out = nc.matmul(Tensor([[1.0, 2.0]]), Tensor([[0.0], [0.0]]))
    np.testing.assert_array_equal(out.data, [[0.0]])


def test_matmul_triple_loop_oracle(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    expected = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(4):
                expected[i, j] += a[i, k] * b[k, j]
    assert np.max(np.abs(nc.matmul(Tensor(a), Tensor(b)).data - expected)) < 1e-12


def test_matmul_shape_mismatch():
    with pytest.raises(nc.ShapeError):
        nc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


# ---------------------------------------------------------------- softmax


def test_softmax_symmetric():
    np.testing.assert_array_equal(nc.softmax_rows(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])


def test_softmax_large_logits_stable():
    out = nc.softmax_rows(Tensor([[1000.0, 0.0]])).data
    assert out[0, 0] == pytest.approx(1.0) and out[0, 1] < 1e-300


def test_softmax_matches_extended_precision():
    # exp(k) / sum exp, k = 1..3, evaluated with mpmath at 40 digits
    expected = [0.09003057317038046, 0.24472847105479764, 0.6652409557748219]
    out = nc.softmax_rows(Tensor([[1.0, 2.0, 3.0]])).data[0]
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-1e3, 1e3)))
def test_softmax_rows_sum_to_one(x):
    out = nc.softmax_rows(Tensor(x)).data
    assert (out >= 0).all()
    assert np.max(np.abs(out.sum(axis=1) - 1.0)) < 1e-12


# ---------------------------------------------------------------- layer norm


def test_layer_norm_constant_row():
    x = Tensor(np.full((1, 4), 3.0))
    out = nc.layer_norm(x, Tensor(np.ones(4)), Tensor(np.zeros(4)))
    np.testing.assert_array_equal(out.data, np.zeros((1, 4)))


def test_layer_norm_zero_gain():
    x = Tensor(np.arange(4.0)[None])
    out = nc.layer_norm(x, Tensor(np.zeros(4)), Tensor(np.full(4, 2.5)))
    np.testing.assert_array_equal(out.data, np.full((1, 4), 2.5))


def test_layer_norm_two_pass_oracle(rng):
    row = rng.normal(size=7)
    gamma, beta, eps = rng.normal(size=7), rng.normal(size=7), 1e-5
    n = len(row)
    mean = 0.0
    for v in row:
        mean += v
    mean /= n
    var = 0.0
    for v in row:
        var += (v - mean) ** 2
    var /= n
    expected = [(v - mean) / math.sqrt(var + eps) * g + b for v, g, b in zip(row, gamma, beta)]
    out = nc.layer_norm(Tensor(row[None]), Tensor(gamma), Tensor(beta), eps).data[0]
    assert np.max(np.abs(out - expected)) < 1e-10


# ---------------------------------------------------------------- backward


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    nc.sum(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_half_square_gives_identity(rng):
    v = rng.normal(size=5)
    x = Tensor(v, requires_grad=True)
    nc.scale(nc.sum(nc.mul(x, x)), 0.5).backward()
    np.testing.assert_allclose(x.grad, v, rtol=0, atol=1e-15)


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(nc.GraphError, match="scalar"):
        nc.scale(x, 2.0).backward()


def test_backward_rejects_detached():
    x = Tensor(np.ones(3))
    with pytest.raises(nc.GraphError, match="no recorded graph"):
        nc.sum(x).backward()
    y = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(nc.GraphError):
        nc.sum(y).detach().backward()


def test_backward_twice_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    loss = nc.sum(nc.mul(x, x))
    loss.backward()
    with pytest.raises(nc.GraphError, match="already ran"):
        loss.backward()


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with nc.no_grad():
        y = nc.sum(nc.mul(x, x))
    assert not y.requires_grad


def test_shared_subexpression_accumulates():
    x = Tensor([2.0], requires_grad=True)
    y = nc.mul(x, x)
    nc.sum(nc.add(y, y)).backward()
    assert x.grad[0] == pytest.approx(8.0)


# ---------------------------------------------------------------- per-op gradients

UNARY = {
    "relu": nc.relu,
    "gelu": nc.gelu,
    "scale": lambda t: nc.scale(t, -1.7),
    "transpose": nc.transpose,
    "swapaxes": lambda t: nc.swapaxes(t, 0, 2),
    "permute": lambda t: nc.permute(t, (2, 0, 1)),
    "reshape": lambda t: nc.reshape(t, (6, 4)),
    "slice": lambda t: t[:, 1:, ::2],
    "fancy_index": lambda t: nc.take(t, (np.array([0, 1, 1]), np.array([2, 0, 2]))),
    "sum_axis": lambda t: nc.sum(t, axis=1),
    "sum_keepdims": lambda t: nc.sum(t, axis=-1, keepdims=True),
    "mean_axis": lambda t: nc.mean(t, axis=(0, 2)),
    "softmax": lambda t: nc.softmax(t, axis=-1),
    "softmax_mid": lambda t: nc.softmax(t, axis=1),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_op_gradients(name, rng):
    op = UNARY[name]
    x0 = rng.normal(size=(2, 3, 4))
    if name == "relu":
        x0 = np.where(np.abs(x0) < 1e-2, 0.5, x0)  # keep away from the kink
    w = rng.normal(size=op(Tensor(x0)).shape)
    x = Tensor(x0, requires_grad=True)
    weighted_sum(op(x), w).backward()
    num = numeric_grad(lambda v: weighted_sum(op(Tensor(v)), w).item(), x0.copy())
    assert rel_err(x.grad, num) < 1e-4


BINARY = {
    "add": (nc.add, (2, 3, 4), (2, 3, 4)),
    "add_bias": (nc.add, (2, 3, 4), (4,)),
    "sub": (nc.sub, (2, 3, 4), (3, 1)),
    "mul": (nc.mul, (2, 3, 4), (2, 3, 4)),
    "mul_broadcast": (nc.mul, (2, 3, 4), (1, 3, 1)),
    "matmul": (nc.matmul, (3, 4), (4, 2)),
    "matmul_batched": (nc.matmul, (2, 3, 4), (2, 4, 5)),
    "matmul_shared_weight": (nc.matmul, (2, 3, 4), (4, 5)),
    "concat": (lambda a, b: nc.concat([a, b], axis=1), (2, 3, 4), (2, 2, 4)),
}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_op_gradients(name, rng):
    op, sa, sb = BINARY[name]
    a0, b0 = rng.normal(size=sa), rng.normal(size=sb)
    w = rng.normal(size=op(Tensor(a0), Tensor(b0)).shape)
    a, b = Tensor(a0, requires_grad=True), Tensor(b0, requires_grad=True)
    weighted_sum(op(a, b), w).backward()
    num_a = numeric_grad(lambda v: weighted_sum(op(Tensor(v), Tensor(b0)), w).item(), a0.copy())
    num_b = numeric_grad(lambda v: weighted_sum(op(Tensor(a0), Tensor(v)), w).item(), b0.copy())
    assert rel_err(a.grad, num_a) < 1e-4
    assert rel_err(b.grad, num_b) < 1e-4


def test_layer_norm_gradients(rng):
    x0, g0, b0 = rng.normal(size=(3, 5)), rng.normal(size=5), rng.normal(size=5)
    w = rng.normal(size=(3, 5))
    x, g, b = (Tensor(v, requires_grad=True) for v in (x0, g0, b0))
    weighted_sum(nc.layer_norm(x, g, b), w).backward()

    def f(xv, gv, bv):
        return weighted_sum(nc.layer_norm(Tensor(xv), Tensor(gv), Tensor(bv)), w).item()

    assert rel_err(x.grad, numeric_grad(lambda v: f(v, g0, b0), x0.copy())) < 1e-4
    assert rel_err(g.grad, numeric_grad(lambda v: f(x0, v, b0), g0.copy())) < 1e-4
    assert rel_err(b.grad, numeric_grad(lambda v: f(x0, g0, v), b0.copy())) < 1e-4


@settings(max_examples=20, deadline=None)
@given(arrays(np.float64, (2, 3), elements=st.floats(-3, 3)), arrays(np.float64, (3, 2), elements=st.floats(-3, 3)))
def test_composite_gradient_property(a0, b0):
    # softmax rows sum to 1, so a plain sum would have zero gradient
    w = np.array([[0.3, -1.2], [0.7, 0.1]])

    def loss(a, b):
        return weighted_sum(nc.softmax(nc.matmul(a, b), axis=-1), w)

    a, b = Tensor(a0, requires_grad=True), Tensor(b0, requires_grad=True)
    loss(a, b).backward()
    num_a = numeric_grad(lambda v: loss(Tensor(v), Tensor(b0)).item(), a0.copy())
    assert rel_err(a.grad, num_a) < 1e-4


def test_ops_are_deterministic(rng):
    a, b = rng.normal(size=(4, 6)), rng.normal(size=(6, 3))

    def run():
        x = nc.layer_norm(nc.matmul(Tensor(a), Tensor(b)), Tensor(np.ones(3)), Tensor(np.zeros(3)))
        return nc.softmax(x, axis=-1).data.tobytes()

    assert run() == run()


# ---------------------------------------------------------------- Adam


def test_adam_first_step_is_sign():
    p = Tensor([1.0, -2.0, 0.5], requires_grad=True)
    g = np.array([3.0, -0.01, 1e-3])
    state = nc.AdamState(lr=0.1)
    nc.adam_step([p], [g], state)
    np.testing.assert_allclose(p.data - [1.0, -2.0, 0.5], -0.1 * np.sign(g), atol=1e-4)
    assert state.t == 1


def test_adam_zero_grad_is_fixed_point(rng):
    v = rng.normal(size=(3, 2))
    p = Tensor(v, requires_grad=True)
    state = nc.AdamState(lr=0.5)
    for _ in range(5):
        nc.adam_step([p], [np.zeros((3, 2))], state)
    np.testing.assert_array_equal(p.data, v)
    assert state.t == 5


def test_adam_scalar_trace_oracle():
    # hand-rolled Adam on f(w) = w^2, w0 = 1, lr = 0.1, default betas and eps
    expected = [0.9000000005, 0.8004122286917928, 0.7015862729460303]
    w = Tensor([1.0], requires_grad=True)
    opt = nc.Adam([w], lr=0.1)
    for want in expected:
        opt.zero_grad()
        nc.sum(nc.mul(w, w)).backward()
        opt.step()
        assert abs(w.data[0] - want) < 1e-12


def test_adam_shape_mismatch():
    p = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(nc.ShapeError):
        nc.adam_step([p], [np.ones(4)], nc.AdamState())


# ---------------------------------------------------------------- finite_diff_check


def _linear_setup(rng):
    W = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=3), requires_grad=True)
    x = rng.normal(size=(5, 4))
    w = rng.normal(size=(5, 3))
    return {"W": W, "b": b}, lambda: weighted_sum(nc.add(nc.matmul(Tensor(x), W), b), w)


def test_gradcheck_linear_is_exact(rng):
    params, closure = _linear_setup(rng)
    report = nc.finite_diff_check(closure, params, tol=1e-8)
    assert report.passed, report.errors


def test_gradcheck_catches_corrupted_gradient(rng):
    params, closure = _linear_setup(rng)
    report = nc.finite_diff_check(closure, params, grad_hook=lambda n, g: 2 * g if n == "W" else g)
    assert not report.passed
    assert report.worst[0] == "W"
    assert report.errors["b"] < 1e-8


def test_gradcheck_detects_nondeterminism(rng):
    params, _ = _linear_setup(rng)
    noise = np.random.default_rng(0)
    with pytest.raises(nc.NondeterminismError):
        nc.finite_diff_check(lambda: nc.sum(nc.scale(params["W"], noise.normal())), params)


def test_gradcheck_refines_step_across_relu_kink():
    # relu input sits 1e-6 from the kink, well inside the +-1e-5 stencil
    x = Tensor([1e-6], requires_grad=True)
    report = nc.finite_diff_check(lambda: nc.sum(nc.relu(x)), {"x": x})
    assert report.refined == {"x": 1}
    assert report.passed


def test_named_parameters_walks_dataclasses():
    from dataclasses import dataclass

    @dataclass
    class Inner:
        a: Tensor
        k: int

    @dataclass
    class Outer:
        inner: Inner
        layers: list
        const: Tensor

    obj = Outer(Inner(Tensor([1.0], requires_grad=True), 3),
                [Tensor([2.0], requires_grad=True)], Tensor([0.0]))
    assert list(nc.named_parameters(obj)) == ["inner.a", "layers.0"]
