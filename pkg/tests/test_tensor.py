import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from renn import tensor as T
from renn.errors import ContractViolation, NumericFault


def numeric_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        ix = it.multi_index
        old = x[ix]
        x[ix] = old + h
        fp = f()
        x[ix] = old - h
        fm = f()
        x[ix] = old
        g[ix] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a) + np.abs(b)))


def check_op(build, shapes, seed=0, positive=False):
    """Build a scalar loss from parameters of ``shapes``; compare with central differences."""
    rng = np.random.default_rng(seed)
    tape = T.Tape()
    params = []
    for s in shapes:
        v = rng.uniform(0.5, 2.0, s) if positive else rng.standard_normal(s)
        params.append(tape.parameter(v))
    weights = {}

    def loss():
        tape.reset()
        out = build(*params)
        if out.data.shape not in weights:
            weights[out.data.shape] = np.random.default_rng(99).standard_normal(out.data.shape)
        return T.tsum(out * tape.constant(weights[out.data.shape]))

    L = loss()
    _, grads = T.forward_backward(tape, L)
    for p, g in zip(params, grads):
        fd = numeric_grad(lambda: loss().item(), p.data)
        assert rel_err(g, fd) < 1e-4


OPS = {
    "add": (lambda a, b: T.add(a, b), [(3, 4), (3, 4)], False),
    "add_broadcast": (lambda a, b: a + b, [(3, 4), (4,)], False),
    "sub": (lambda a, b: T.sub(a, b), [(5,), (5,)], False),
    "mul": (lambda a, b: T.mul(a, b), [(2, 3), (2, 3)], False),
    "mul_broadcast": (lambda a, b: a * b, [(2, 3), (2, 1)], False),
    "scale": (lambda a: T.scale(a, -2.5), [(4,)], False),
    "add_scalar": (lambda a: T.add_scalar(a, 3.0), [(4,)], False),
    "sqdiff": (lambda a, b: T.sqdiff(a, b), [(6,), (6,)], False),
    "tanh": (lambda a: T.tanh(a), [(3, 3)], False),
    "exp": (lambda a: T.exp(a), [(5,)], False),
    "log": (lambda a: T.log(a, 1e-3), [(5,)], True),
    "softmax": (lambda a: T.softmax(a), [(3, 8)], False),
    "matmul": (lambda a, b: T.matmul(a, b), [(3, 4), (4, 2)], False),
    "sum_axis": (lambda a: T.tsum(a, axis=0), [(3, 4)], False),
    "sum_all": (lambda a: T.tsum(a), [(3, 4)], False),
    "mean": (lambda a: T.mean(a, axis=1), [(3, 4)], False),
    "gather": (lambda a: T.gather(a, [0, 2, 2, 4]), [(5,)], False),
    "gather_rows": (lambda a: T.gather(a, np.array([1, 1, 0])), [(3, 2)], False),
    "reshape": (lambda a: T.reshape(a, (2, 6)), [(3, 4)], False),
    "concat": (lambda a, b: T.concat([a, b]), [(3,), (5,)], False),
    "neg_rsub": (lambda a: 1.0 - (-a), [(4,)], False),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_primitive_gradient_matches_finite_differences(name):
    build, shapes, positive = OPS[name]
    check_op(build, shapes, positive=positive)


def test_linear_dense_and_sparse_gradients():
    M = np.random.default_rng(3).standard_normal((4, 6))
    check_op(lambda x: T.linear(M, x), [(6,)])
    check_op(lambda x: T.linear(sp.csr_matrix(M), x), [(6,)])


def test_linear_shape_mismatch():
    tape = T.Tape()
    x = tape.parameter(np.zeros(3))
    with pytest.raises(ContractViolation):
        T.linear(np.eye(4), x)


def test_quadratic_gradient():
    tape = T.Tape()
    p = tape.parameter([1.0, 2.0])
    value, (g,) = T.forward_backward(tape, T.tsum(p * p))
    assert value == 5.0
    np.testing.assert_array_equal(g, [2.0, 4.0])


def test_log_softmax_first_entry_at_zero_logits():
    tape = T.Tape()
    p = tape.parameter([0.0, 0.0])
    loss = T.gather(T.log(T.softmax(p)), [0])
    _, (g,) = T.forward_backward(tape, T.tsum(loss))
    np.testing.assert_allclose(g, [0.5, -0.5], atol=1e-15)


def test_three_layer_network_gradient():
    rng = np.random.default_rng(7)
    X = rng.standard_normal((5, 4))

    def build(W1, W2, W3):
        tape = W1.tape
        h = T.tanh(T.matmul(tape.constant(X), W1))
        h = T.tanh(T.matmul(h, W2))
        return T.softmax(T.matmul(h, W3))
    check_op(build, [(4, 6), (6, 6), (6, 3)], seed=1)


def test_replay_recomputes_from_current_leaves():
    tape = T.Tape()
    p = tape.parameter([1.0, 2.0])
    c = tape.constant(np.array([3.0, 4.0]))
    loss = T.tsum(p * c)
    p.data[:] = [2.0, 2.0]
    c.data[:] = [1.0, 1.0]
    tape.replay()
    assert loss.item() == 4.0


def test_softmax_rows_normalized_and_sum_gradient_zero():
    tape = T.Tape()
    p = tape.parameter(np.random.default_rng(0).standard_normal((4, 16)) * 5)
    s = T.softmax(p)
    np.testing.assert_allclose(s.data.sum(axis=1), 1.0, atol=1e-12)
    _, (g,) = T.forward_backward(tape, T.tsum(s))
    assert np.max(np.abs(g)) < 1e-12


def test_non_finite_raises():
    tape = T.Tape()
    p = tape.parameter([0.0])
    with pytest.raises(NumericFault):
        T.log(p)
    with pytest.raises(NumericFault):
        tape.parameter([np.nan])


def test_backward_needs_scalar():
    tape = T.Tape()
    p = tape.parameter([1.0, 2.0])
    with pytest.raises(ContractViolation):
        tape.backward(p * p)


def test_cross_tape_mix_rejected():
    a = T.Tape().parameter([1.0])
    b = T.Tape().parameter([1.0])
    with pytest.raises(ContractViolation):
        T.add(a, b)


def test_forward_determinism():
    def run():
        tape = T.Tape()
        p = tape.parameter(np.random.default_rng(5).standard_normal((3, 3)))
        loss = T.tsum(T.tanh(T.matmul(p, p)))
        return T.forward_backward(tape, loss)
    v1, g1 = run()
    v2, g2 = run()
    assert v1 == v2
    assert np.array_equal(g1[0], g2[0])


def test_adam_zero_gradient_leaves_params():
    x = np.array([1.0, -2.0])
    opt = T.Adam([x], lr=0.1)
    opt.m[0][:] = 0.0
    opt.step([x], [np.zeros(2)])
    np.testing.assert_array_equal(x, [1.0, -2.0])


def test_adam_moves_against_constant_gradient():
    x = np.array([0.0, 0.0])
    opt = T.Adam([x], lr=0.01)
    for _ in range(50):
        opt.step([x], [np.array([1.0, -3.0])])
    assert x[0] < 0 < x[1]


def test_adam_minimizes_quadratic():
    tape = T.Tape()
    x = tape.parameter([0.0])
    opt = T.Adam([x], lr=0.1)
    for _ in range(500):
        tape.reset()
        _, grads = T.forward_backward(tape, T.tsum(T.sqdiff(x, tape.constant([3.0]))))
        opt.step([x], grads)
    assert abs(x.data[0] - 3.0) < 1e-3


def test_adam_shape_mismatch():
    x = np.zeros(3)
    opt = T.Adam([x])
    with pytest.raises(ContractViolation):
        opt.step([x], [np.zeros(2)])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=12))
def test_softmax_property(logits):
    tape = T.Tape()
    s = T.softmax(tape.parameter(logits)).data
    assert np.all(s >= 0)
    assert abs(s.sum() - 1.0) < 1e-12
