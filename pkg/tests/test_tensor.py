import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sargnn import tensor as T
from sargnn.optim import grad_check
from sargnn.tensor import ContractError, NumericError, ShapeError, Tensor


def test_matmul_examples():
    eye = T.tensor([[1.0, 0.0], [0.0, 1.0]])
    b = T.tensor([[3.0, 4.0], [5.0, 6.0]])
    np.testing.assert_array_equal((eye @ b).data, b.data)
    assert (T.tensor([[1.0, 2.0]]) @ T.tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]
    out = T.tensor(np.zeros((2, 3))) @ T.tensor(np.random.default_rng(0).normal(size=(3, 2)))
    np.testing.assert_array_equal(out.data, np.zeros((2, 2)))


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        T.matmul(T.tensor(np.ones((2, 3))), T.tensor(np.ones((2, 3))))


@pytest.mark.parametrize("x, expected", [
    ([0.0, 0.0], [0.5, 0.5]),
    ([1000.0, 1000.0, 1000.0], [1 / 3] * 3),
    ([np.log(1.0), np.log(3.0)], [0.25, 0.75]),
])
def test_softmax_examples(x, expected):
    out = T.softmax(T.tensor(x), axis=0).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-15)


def test_softmax_rejects_nonfinite():
    with pytest.raises(NumericError):
        T.softmax(T.tensor([0.0, np.inf]), axis=0)


def test_masked_softmax_zero_off_mask_and_empty_row():
    x = T.tensor([[1.0, 2.0, 3.0]])
    out = T.softmax(x, axis=1, mask=np.array([[True, False, True]])).data
    assert out[0, 1] == 0.0
    np.testing.assert_allclose(out[0, [0, 2]], np.exp([1, 3]) / np.exp([1, 3]).sum())
    with pytest.raises(ContractError):
        T.softmax(x, axis=1, mask=np.zeros((1, 3), dtype=bool))


def test_elementwise_examples():
    assert T.relu(T.tensor([-1.0, 2.0])).data.tolist() == [0.0, 2.0]
    assert T.leaky_relu(T.tensor([-10.0, 10.0]), 0.2).data.tolist() == [-2.0, 10.0]
    assert T.mean(T.tensor([2.0, 4.0, 6.0])).item() == 4.0
    with pytest.raises(NumericError):
        T.log(T.tensor([1.0, 0.0]))


def test_backward_examples():
    p = T.parameter(np.zeros(3))
    T.backward(T.sum(p))
    assert p.grad.tolist() == [1.0, 1.0, 1.0]

    p = T.parameter([1.0, 2.0])
    T.backward(T.sum(p * p))
    assert p.grad.tolist() == [2.0, 4.0]

    p = T.parameter([1.0, 2.0])
    T.backward(T.sum(p) + T.sum(p))
    assert p.grad.tolist() == [2.0, 2.0]


def test_backward_requires_scalar():
    p = T.parameter([1.0, 2.0])
    with pytest.raises(ContractError):
        T.backward(p * 2.0)


def test_no_grad_records_nothing():
    p = T.parameter([1.0])
    with T.no_grad():
        y = p * 3.0
    assert not y.requires_grad
    assert T.Tape.from_root(y).nodes == [] or all(n is y for n in T.Tape.from_root(y).nodes)


def test_tape_is_topologically_ordered():
    a = T.parameter([1.0, 2.0])
    b = T.exp(a) * a
    c = T.sum(b + a)
    nodes = T.Tape.from_root(c).nodes
    pos = {id(n): i for i, n in enumerate(nodes)}
    for n in nodes:
        for parent in n._parents:
            if id(parent) in pos:
                assert pos[id(parent)] < pos[id(n)]


def test_diamond_accumulates_once_per_path():
    # y = exp(x) used by two branches; dy/dx must be exp(x) * (2 + 3)
    x = T.parameter([0.3])
    y = T.exp(x)
    T.backward(T.sum(y * 2.0 + y * 3.0))
    np.testing.assert_allclose(x.grad, 5 * np.exp(0.3), rtol=1e-14)


_OPS = {
    "add": lambda a, b: T.sum(a + b),
    "sub": lambda a, b: T.sum(a - b),
    "mul": lambda a, b: T.sum(a * b),
    "div": lambda a, b: T.sum(a / (T.exp(b) + 1.0)),
    "matmul": lambda a, b: T.sum(T.exp(T.scale(a @ b.T, 0.1))),
    "transpose": lambda a, b: T.sum(a.T @ b),
    "reshape": lambda a, b: T.sum(T.reshape(a, (-1,)) * T.reshape(b, (-1,))),
    "concat": lambda a, b: T.sum(T.exp(T.scale(T.concat([a, b], axis=1), 0.3))),
    "exp_log": lambda a, b: T.sum(T.log(T.exp(a) + T.exp(b))),
    "relu": lambda a, b: T.sum(T.relu(a) * b),
    "leaky": lambda a, b: T.sum(T.leaky_relu(a, 0.2) * b),
    "power": lambda a, b: T.sum(T.power(T.exp(a), 1.7) * b),
    "mean_axis": lambda a, b: T.sum(T.mean(a * b, axis=0) * T.mean(a, axis=0)),
    "sum_keepdims": lambda a, b: T.sum(T.sum(a, axis=1, keepdims=True) * b),
    "softmax": lambda a, b: T.sum(T.softmax(a, axis=1) * b),
    "masked_softmax": lambda a, b: T.sum(T.softmax(a, axis=1, mask=np.array(
        [[1, 0, 1], [1, 1, 0]], dtype=bool)) * b),
    "log_softmax": lambda a, b: T.sum(T.log_softmax(a, axis=0) * b),
    "broadcast": lambda a, b: T.sum((a + T.sum(b, axis=0)) * a),
}


@pytest.mark.parametrize("name", sorted(_OPS))
def test_op_gradients(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    a = T.parameter(rng.normal(size=(2, 3)))
    b = T.parameter(rng.normal(size=(2, 3)))
    # keep relu/leaky away from the kink
    a.data[np.abs(a.data) < 1e-2] += 0.1
    assert grad_check(lambda: _OPS[name](a, b), [a, b]) < 1e-7


finite = st.floats(-50, 50, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 5)), elements=finite))
def test_softmax_rows_are_distributions(x):
    out = T.softmax(Tensor(x), axis=1).data
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(out >= 0)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 6), elements=finite), finite)
def test_softmax_shift_invariance(x, c):
    a = T.softmax(Tensor(x), axis=0).data
    b = T.softmax(Tensor(x + c), axis=0).data
    np.testing.assert_allclose(a, b, atol=1e-12)
