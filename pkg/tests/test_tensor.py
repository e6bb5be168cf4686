import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from doppelbaum import tensor as T
from doppelbaum.tensor import Tensor
from oracles import numeric_grad, rel_error


def test_matmul_examples():
    out = T.matmul(Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([[5.0, 6.0], [7.0, 8.0]]))
    np.testing.assert_array_equal(out.data, [[5, 6], [7, 8]])
    assert T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_gradient_of_sum():
    rng = np.random.default_rng(0)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    T.matmul(a, b).sum().backward()
    # d sum(AB) / dA = 1 B^T: every row is the row-sum of B
    np.testing.assert_allclose(a.grad, np.tile(b.data.sum(axis=1), (3, 1)))
    num = numeric_grad(lambda: (a.data @ b.data).sum(), a.data)
    assert rel_error(a.grad, num) <= 1e-6


def test_matmul_shape_mismatch():
    with pytest.raises(ValueError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_softmax_examples():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    np.testing.assert_allclose(T.softmax(Tensor([math.log(1), math.log(3)])).data, [0.25, 0.75])
    out = T.softmax(Tensor([5.0, 5.0, 5.0]), mask=np.array([True, True, False]))
    assert out.data.tolist() == [0.5, 0.5, 0.0]


def test_softmax_fully_masked_row():
    with pytest.raises(ValueError):
        T.softmax(Tensor(np.zeros((2, 3))), mask=np.array([[True, False, False], [False] * 3]))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 7), elements=st.floats(-50, 50)))
def test_softmax_rows_are_distributions(x):
    p = T.softmax(Tensor(x)).data
    assert (p >= 0).all()
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)


def test_sigmoid_examples():
    assert T.sigmoid(Tensor(0.0)).item() == 0.5
    assert T.sigmoid(Tensor(math.log(3))).item() == pytest.approx(0.75, abs=1e-15)
    assert T.sigmoid(Tensor(-math.log(3))).item() == pytest.approx(0.25, abs=1e-15)
    big = T.sigmoid(Tensor([-800.0, 800.0])).data
    assert np.isfinite(big).all() and 0.0 <= big[0] < 1e-300 and big[1] == 1.0


def test_backward_examples():
    w = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    (w * w).sum().backward()
    assert w.grad.tolist() == [2.0, 4.0, 6.0]

    v = Tensor(0.0, requires_grad=True)
    T.sigmoid(v).backward()
    assert v.grad == pytest.approx(0.25)


def test_backward_accumulates_without_reset():
    w = Tensor([1.0, -2.0], requires_grad=True)
    (w * w).sum().backward()
    (w * w).sum().backward()
    assert w.grad.tolist() == [4.0, -8.0]
    w.zero_grad()
    (w * w).sum().backward()
    assert w.grad.tolist() == [2.0, -4.0]


def test_backward_requires_scalar():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError):
        (w * w).backward()


def test_no_grad_builds_no_graph():
    w = Tensor([1.0], requires_grad=True)
    with T.no_grad():
        out = w * w
    assert not out.requires_grad


def _check_op(build, *shapes, seed=0, positive=False):
    rng = np.random.default_rng(seed)
    leaves = []
    for s in shapes:
        x = rng.normal(size=s)
        leaves.append(Tensor(np.abs(x) + 0.5 if positive else x, requires_grad=True))
    weights = rng.normal(size=build(*leaves).shape)

    def f():
        with T.no_grad():
            return float((build(*leaves).data * weights).sum())

    (build(*leaves) * weights).sum().backward()
    for leaf in leaves:
        assert rel_error(leaf.grad, numeric_grad(f, leaf.data)) <= 1e-4


OPS = {
    "add_broadcast": (lambda a, b: a + b, (3, 4), (4,)),
    "mul_broadcast": (lambda a, b: a * b, (2, 3, 4), (3, 1)),
    "sub": (lambda a, b: a - b, (3,), (3,)),
    "reciprocal": (lambda a: T.reciprocal(a), (5,)),
    "square": (lambda a: T.square(a), (5,)),
    "sigmoid": (lambda a: T.sigmoid(a), (2, 5)),
    "batched_matmul": (lambda a, b: a @ b, (2, 3, 4), (2, 4, 5)),
    "transpose": (lambda a: T.transpose(a, (0, 2, 1)) * 1.0, (2, 3, 4)),
    "reshape": (lambda a: T.reshape(a, (6, 2)) * 1.0, (3, 4)),
    "sum_axis": (lambda a: T.tsum(a, axis=1), (3, 4)),
    "mean": (lambda a: T.mean(a, axis=-1, keepdims=True), (3, 4)),
    "softmax": (lambda a: T.softmax(a), (3, 5)),
    "log_softmax": (lambda a: T.log_softmax(a), (3, 5)),
    "layer_norm": (lambda a, g, b: T.layer_norm(a, g, b), (3, 6), (6,), (6,)),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_match_finite_differences(name):
    build, *shapes = OPS[name]
    _check_op(build, *shapes, positive=name == "reciprocal")


def test_masked_softmax_gradient():
    mask = np.array([[True, True, False, True], [True, False, False, False]])
    _check_op(lambda a: T.softmax(a, mask=mask), (2, 4))


def test_relu_gradient_away_from_kink():
    x = Tensor([-2.0, -0.5, 0.5, 2.0], requires_grad=True)
    T.relu(x).sum().backward()
    assert x.grad.tolist() == [0.0, 0.0, 1.0, 1.0]


def test_embedding_lookup_and_gradient():
    table = Tensor(np.arange(12.0).reshape(4, 3), requires_grad=True)
    out = T.embedding(table, np.array([[1, 1, 3]]))
    np.testing.assert_array_equal(out.data[0, 0], [3, 4, 5])
    out.sum().backward()
    assert table.grad[:, 0].tolist() == [0, 2, 0, 1]
    with pytest.raises(IndexError):
        T.embedding(table, np.array([4]))


def test_dropout_identity_cases():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(4, 5)))
    np.testing.assert_array_equal(T.dropout(x, 0.0, rng, training=True).data, x.data)
    np.testing.assert_array_equal(T.dropout(x, 0.5, rng, training=False).data, x.data)


def test_dropout_is_inverted():
    rng = np.random.default_rng(0)
    out = T.dropout(Tensor(np.ones(200_000)), 0.25, rng, training=True).data
    kept = out[out != 0]
    np.testing.assert_allclose(kept, 1 / 0.75)
    assert abs(out.mean() - 1.0) < 0.01
