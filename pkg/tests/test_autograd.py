import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fitprint import autograd as ag
from fitprint.autograd import SGD, ShapeError, Tensor
from fitprint.gradcheck import CASES, check, numeric_grad, relative_error


@pytest.mark.parametrize("case", CASES, ids=lambda c: c.name)
def test_primitive_matches_finite_differences(case):
    rng = np.random.default_rng([7, len(case.name)])
    for _ in range(10):
        arrays_ = [np.array(a, dtype=np.float64) for a in case.make(rng)]
        assert check(case.build, arrays_) <= 1e-4


def test_softmax_of_zeros_is_uniform():
    assert np.allclose(ag.softmax(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])


def test_relu_definition():
    assert ag.relu(Tensor([-1.0, 2.0])).data.tolist() == [0.0, 2.0]


def test_cosine_of_vector_with_itself_is_one():
    u = Tensor([[0.3, -2.0, 5.0]])
    assert ag.cosine_similarity(u, u).data[0] == pytest.approx(1.0)


def test_quadratic_gradient():
    w = Tensor([1.0, 2.0], requires_grad=True)
    ag.backward(ag.sum(ag.mul(w, w)))
    assert w.grad.tolist() == [2.0, 4.0]


def test_cosine_gradient_vanishes_at_maximum():
    a = Tensor([[0.2, 0.7, 0.1]], requires_grad=True)
    ag.backward(ag.sum(ag.cosine_similarity(a, Tensor(a.data.copy()))))
    assert np.allclose(a.grad, 0.0, atol=1e-10)


def test_random_two_layer_net_step_1e5():
    rng = np.random.default_rng(1)
    x, w1, w2 = rng.normal(size=(4, 6)), rng.normal(size=(6, 5)), rng.normal(size=(5, 3))

    def build(t):
        h = ag.relu(ag.bias_add(ag.matmul(t[0], t[1]), Tensor(np.full(5, 0.1))))
        return ag.cross_entropy(ag.matmul(h, t[2]), np.array([0, 1, 2, 1]))

    assert check(build, [x, w1, w2], step=1e-5) <= 1e-4


def test_two_consumers_accumulate():
    x = Tensor([0.5, -1.5], requires_grad=True)
    ag.backward(ag.sum(ag.add(ag.mul(x, x), ag.mul(x, Tensor([3.0, 3.0])))))
    assert np.allclose(x.grad, 2 * x.data + 3)


def test_leaf_grads_accumulate_across_backward_calls():
    w = Tensor([1.0], requires_grad=True)
    ag.backward(ag.sum(w * 2.0))
    ag.backward(ag.sum(w * 2.0))
    assert w.grad.tolist() == [4.0]


def test_non_scalar_loss_rejected():
    with pytest.raises(ValueError):
        ag.backward(Tensor(np.ones(3), requires_grad=True) * 2.0)


def test_shape_error_names_op_and_shapes():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        ag.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_no_grad_records_nothing():
    w = Tensor([1.0], requires_grad=True)
    with ag.no_grad():
        out = w * 3.0
    assert not out.requires_grad


def test_entropy_handles_zero_probability():
    assert ag.entropy(Tensor([[1.0, 0.0]])).data[0] == 0.0
    assert ag.entropy(Tensor([[0.5, 0.5]])).data[0] == pytest.approx(math.log(2))


def test_sgd_zero_lr_leaves_params():
    w = Tensor([1.0, -2.0], requires_grad=True)
    w.grad = np.array([5.0, 5.0])
    SGD([w], lr=0.0, momentum=0.9, weight_decay=0.1).step()
    assert w.data.tolist() == [1.0, -2.0]


def test_sgd_plain_step():
    w = Tensor([1.0], requires_grad=True)
    w.grad = np.array([2.0])
    SGD([w], lr=0.1).step()
    assert w.data[0] == pytest.approx(0.8)
    assert w.grad is None


def test_sgd_momentum_two_steps():
    w = Tensor([0.0], requires_grad=True)
    opt = SGD([w], lr=0.1, momentum=0.9)
    for _ in range(2):
        w.grad = np.array([1.0])
        opt.step()
    assert w.data[0] == pytest.approx(-0.29)


def test_sgd_missing_grad_rejected():
    with pytest.raises(ValueError):
        SGD([Tensor([1.0], requires_grad=True)], lr=0.1).step()


def test_cosine_annealing_endpoints_and_midpoint():
    assert ag.cosine_annealing_lr(0, 300, 1.2e-2, 4e-3) == pytest.approx(1.2e-2)
    assert ag.cosine_annealing_lr(300, 300, 1.2e-2, 4e-3) == pytest.approx(4e-3)
    assert ag.cosine_annealing_lr(150, 300, 1.2e-2, 4e-3) == pytest.approx(8e-3)


def test_numeric_grad_of_quadratic():
    g = numeric_grad(lambda v: float((v[0] ** 2).sum()), [np.array([1.0, -3.0])], 0)
    assert relative_error(g, np.array([2.0, -6.0])) < 1e-8


finite = st.floats(-50, 50, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8)), elements=finite))
def test_softmax_rows_are_distributions(x):
    p = ag.softmax(Tensor(x)).data
    assert np.all(p >= 0)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=finite))
def test_forward_is_deterministic(x):
    a = ag.entropy(ag.softmax(Tensor(x))).data
    b = ag.entropy(ag.softmax(Tensor(x))).data
    assert np.array_equal(a, b)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 6)), elements=st.floats(-5, 5)),
       arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 6)), elements=st.floats(-5, 5)))
def test_cosine_bounded(a, b):
    if a.shape != b.shape:
        return
    c = ag.cosine_similarity(Tensor(a), Tensor(b)).data
    assert np.all(np.abs(c) <= 1 + 1e-12)
