import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taetlab import autodiff as ad

from fd import fd_gradient, rel_err

rng = np.random.default_rng(99)


def test_add_broadcast_bias():
    x = ad.leaf(rng.standard_normal((4, 3)))
    b = ad.leaf(rng.standard_normal(3))
    out = ad.sum_all(ad.square(x + b))
    ad.backward(out)
    fd = fd_gradient(lambda v: float(((x.value + v) ** 2).sum()), b.value)
    assert rel_err(b.grad, fd).max() < 1e-6


def test_matmul_grads_match_fd():
    a0 = rng.standard_normal((3, 4))
    b0 = rng.standard_normal((4, 2))
    a, b = ad.leaf(a0), ad.leaf(b0)
    out = ad.sum_all(ad.relu(a @ b))
    ad.backward(out)
    fd_a = fd_gradient(lambda v: float(np.maximum(v @ b0, 0).sum()), a0)
    fd_b = fd_gradient(lambda v: float(np.maximum(a0 @ v, 0).sum()), b0)
    assert rel_err(a.grad, fd_a).max() < 1e-6
    assert rel_err(b.grad, fd_b).max() < 1e-6


def test_log_softmax_gradient():
    z0 = rng.standard_normal((5, 4))
    y = np.array([0, 3, 1, 2, 2])
    z = ad.leaf(z0)
    out = ad.mean_all(-ad.pick(ad.log_softmax(z), y))
    ad.backward(out)

    def ce(v):
        m = v.max(axis=1, keepdims=True)
        ls = v - (m + np.log(np.exp(v - m).sum(axis=1, keepdims=True)))
        return float(-ls[np.arange(5), y].mean())

    assert rel_err(z.grad, fd_gradient(ce, z0)).max() < 1e-6


def test_log_softmax_is_stable_at_huge_logits():
    z = ad.leaf(np.array([[1000.0, 0.0], [0.0, -1000.0]]))
    out = ad.log_softmax(z)
    assert np.isfinite(out.value).all()
    ad.backward(ad.sum_all(out))
    assert np.isfinite(z.grad).all()


def test_div_and_square_composite():
    x0 = np.array([1.0, 3.0])
    x = ad.leaf(x0)
    total = ad.sum_all(x)
    out = ad.sum_all(ad.square(x / total))  # sum of squared shares
    ad.backward(out)
    assert out.value == pytest.approx(0.625)
    fd = fd_gradient(lambda v: float(((v / v.sum()) ** 2).sum()), x0)
    assert rel_err(x.grad, fd).max() < 1e-6


def test_rowmax_routes_to_first_argmax():
    x = ad.leaf(np.array([[2.0, 5.0, 5.0], [7.0, 1.0, 0.0]]))
    out = ad.sum_all(ad.rowmax(x))
    ad.backward(out)
    expected = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
    np.testing.assert_array_equal(x.grad, expected)


def test_maximum_floor_blocks_gradient_when_saturated():
    x = ad.leaf(np.array([-2.0, 3.0]))
    out = ad.sum_all(ad.maximum(x, 0.0))
    ad.backward(out)
    np.testing.assert_array_equal(x.grad, np.array([0.0, 1.0]))


def test_l2norm_rows_gradient_and_zero_row():
    x0 = np.array([[3.0, 4.0], [0.0, 0.0]])
    x = ad.leaf(x0)
    out = ad.sum_all(ad.l2norm_rows(x))
    ad.backward(out)
    np.testing.assert_allclose(x.grad[0], [0.6, 0.8])
    np.testing.assert_array_equal(x.grad[1], [0.0, 0.0])  # subgradient at the origin


def test_constants_stay_off_the_tape():
    x = ad.const(rng.standard_normal((2, 2)))
    w = ad.const(rng.standard_normal((2, 2)))
    out = ad.sum_all(x @ w)
    assert not out.tracked()
    ad.backward(out)  # no-op, nothing to accumulate
    assert x.grad is None and w.grad is None


def test_grad_accumulates_across_reuse():
    x = ad.leaf(np.array([2.0]))
    out = ad.sum_all(x * x + x)
    ad.backward(out)
    np.testing.assert_allclose(x.grad, [5.0])  # 2x + 1 at x=2


@settings(max_examples=25, deadline=None)
@given(
    n=st.integers(min_value=1, max_value=6),
    c=st.integers(min_value=2, max_value=5),
    data_seed=st.integers(min_value=0, max_value=10_000),
)
def test_ce_graph_gradients_finite_and_match_fd(n, c, data_seed):
    local = np.random.default_rng(data_seed)
    z0 = 3.0 * local.standard_normal((n, c))
    y = local.integers(0, c, size=n)
    z = ad.leaf(z0)
    out = ad.mean_all(-ad.pick(ad.log_softmax(z), y))
    ad.backward(out)
    assert np.isfinite(out.value)
    assert np.isfinite(z.grad).all()

    def f(v):
        m = v.max(axis=1, keepdims=True)
        ls = v - (m + np.log(np.exp(v - m).sum(axis=1, keepdims=True)))
        return float(-ls[np.arange(n), y].mean())

    assert rel_err(z.grad, fd_gradient(f, z0)).max() < 1e-4
