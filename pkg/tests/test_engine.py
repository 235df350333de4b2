"""Differentiation engine: primitive values, gradients, conv paths."""

import numpy as np
import pytest

from lorentzkit.engine import backward, finite_diff_check, leaf
from lorentzkit.engine import node as N
from lorentzkit.errors import NumericError, UsageError


def test_backward_of_sum_is_ones():
    x = leaf(np.array([1.0, 2.0, 3.0]))
    backward(N.sum_(x))
    np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])


def test_square_gradient():
    x = leaf(np.array(3.0))
    backward(x * x)
    assert x.grad == pytest.approx(6.0)


def test_arccosh_derivative_closed_form():
    x = leaf(np.array(2.0))
    backward(N.arccosh(x))
    assert float(x.grad) == pytest.approx(1.0 / np.sqrt(3.0), rel=1e-12)


def test_arccosh_clamped_gradient_is_zero_below_one():
    x = leaf(np.array(0.5))
    y = N.arccosh(x)
    assert float(y.data) == pytest.approx(0.0, abs=2e-6)
    backward(y)
    assert float(x.grad) == 0.0


def test_atanh_clamp_and_gradient():
    x = leaf(np.array([0.3, 2.0]))
    y = N.atanh(x)
    backward(N.sum_(y))
    assert x.grad[0] == pytest.approx(1.0 / (1 - 0.09), rel=1e-12)
    assert x.grad[1] == 0.0  # outside the clamp region


def test_polynomial_finite_diff():
    def f(ls):
        a = ls[0]
        return N.sum_(a * a * a - 2.0 * a * a + a)

    # points sit away from the gradient's roots so relative error is meaningful
    rep = finite_diff_check(f, [np.array([-0.5, -1.2, 2.0])], h=1e-5)
    assert rep.max_rel_err < 1e-9


def test_matmul_inv_transpose_grads():
    rng = np.random.default_rng(0)
    a0 = rng.normal(size=(3, 3)) + 3 * np.eye(3)
    b0 = rng.normal(size=(3, 2))

    def f(ls):
        a, b = ls
        return N.sum_(N.matmul(N.inv(a), b) * 1.5)

    rep = finite_diff_check(f, [a0, b0], h=1e-6)
    assert rep.max_rel_err < 1e-6


def test_where_clamp_broadcast_grads():
    rng = np.random.default_rng(1)
    x0 = rng.normal(size=(4, 3))

    def f(ls):
        x = ls[0]
        y = N.where(x0 > 0, x * 2.0, x * x)
        z = N.clamp_min(y, -0.5) + N.broadcast_to(N.sum_(x, axis=0, keepdims=True), (4, 3))
        return N.sum_(N.tanh(z))

    rep = finite_diff_check(f, [x0], h=1e-6)
    assert rep.max_rel_err < 1e-7


def test_concat_slice_reshape_grads():
    rng = np.random.default_rng(2)
    a0, b0 = rng.normal(size=(2, 3)), rng.normal(size=(2, 2))

    def f(ls):
        a, b = ls
        c = N.concat([a, b], axis=1)
        return N.sum_(c[:, 1:4] * c[:, 1:4]) + N.sum_(N.reshape(a, (3, 2))[0])

    rep = finite_diff_check(f, [a0, b0], h=1e-6)
    assert rep.max_rel_err < 1e-8


def test_fancy_index_gather_accumulates_duplicates():
    x = leaf(np.array([1.0, 2.0, 3.0]))
    idx = np.array([0, 0, 2])
    backward(N.sum_(x[idx]))
    np.testing.assert_array_equal(x.grad, [2.0, 0.0, 1.0])


def test_conv2d_paths_agree():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 3, 8, 8))
    w = rng.normal(size=(4, 3, 3, 3))
    for stride, pad in ((1, 0), (1, 1), (2, 1)):
        a = N.conv2d(N.as_node(x), N.as_node(w), stride=stride, padding=pad,
                     method="im2col").data
        b = N.conv2d(N.as_node(x), N.as_node(w), stride=stride, padding=pad,
                     method="direct").data
        assert np.abs(a - b).max() < 1e-10


def test_conv2d_1x1_equals_per_pixel_matmul():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 5, 6, 6))
    w = rng.normal(size=(7, 5, 1, 1))
    out = N.conv2d(N.as_node(x), N.as_node(w)).data
    ref = np.einsum("bchw,oc->bohw", x, w[:, :, 0, 0])
    assert np.abs(out - ref).max() < 1e-12


def test_conv2d_gradcheck():
    rng = np.random.default_rng(5)
    x0 = rng.normal(size=(1, 2, 5, 5))
    w0 = rng.normal(size=(3, 2, 3, 3))
    wsum = rng.normal(size=(1, 3, 3, 3))

    def f(ls):
        return N.sum_(N.conv2d(ls[0], ls[1], stride=2, padding=1) * wsum)

    rep = finite_diff_check(f, [x0, w0], h=1e-6)
    assert rep.max_rel_err < 1e-7


def test_gradient_accumulation_deterministic():
    rng = np.random.default_rng(6)
    x = leaf(rng.normal(size=(5,)))
    y = N.sum_(N.tanh(x) * x + N.exp(x * 0.1))
    backward(y)
    g1 = x.grad.copy()
    N.clear_grads(y)
    backward(y)
    np.testing.assert_array_equal(g1, x.grad)


def test_shape_errors():
    with pytest.raises(UsageError):
        N.matmul(leaf(np.zeros((2, 3))), leaf(np.zeros((2, 3))))
    with pytest.raises(UsageError):
        N.conv2d(leaf(np.zeros((1, 2, 4, 4))), leaf(np.zeros((3, 5, 3, 3))))
    with pytest.raises(UsageError):
        backward(leaf(np.zeros(3)))


def test_non_finite_forward_raises_with_op_name():
    x = leaf(np.array([1.0, -1.0]))
    with np.errstate(invalid="ignore"), pytest.raises(NumericError, match="log"):
        N.log(x)


def test_unit_speed_geodesic_gradient():
    # d(0, exp_0(z)) = |z|, so its gradient wrt z has unit norm
    from lorentzkit import lmath

    z0 = np.array([0.7, -0.3, 0.5])
    z = leaf(z0)
    y = lmath.expmap0_space(z, 1.0)
    backward(lmath.dist0(y, 1.0))
    assert np.linalg.norm(z.grad) == pytest.approx(1.0, abs=1e-10)


def test_exp_log_roundtrip_jacobian_identity():
    # log_0(exp_0(z)) = z, so the pullback of any w through the chain is w
    from lorentzkit import lmath

    rng = np.random.default_rng(7)
    z0 = rng.normal(size=4)
    w = rng.normal(size=4)
    z = leaf(z0)
    zz = lmath.logmap0_space(lmath.expmap0_space(z, 1.3), 1.3)
    backward(N.sum_(zz * w))
    np.testing.assert_allclose(z.grad, w, atol=1e-9)
