"""Compiled extension vs pure-numpy fallback kernels."""

import numpy as np
import pytest

from lorentzkit.engine import kernels


def _both():
    fb = kernels.get_backend("fallback")
    try:
        comp = kernels.get_backend("compiled")
    except ImportError:
        pytest.skip("compiled kernel core unavailable")
    return comp, fb


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (3, 2)])
def test_unfold_bitwise_equal(stride, pad):
    comp, fb = _both()
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 9, 7))
    a = comp.unfold(x, 3, 3, stride, stride, pad, pad)
    b = fb.unfold(x, 3, 3, stride, stride, pad, pad)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
def test_fold_add_agrees(stride, pad):
    comp, fb = _both()
    rng = np.random.default_rng(1)
    H = W = 8
    OH = (H + 2 * pad - 3) // stride + 1
    cols = rng.normal(size=(2, OH, OH, 3 * 3 * 4))
    a = comp.fold_add(cols, 4, H, W, 3, 3, stride, stride, pad, pad)
    b = fb.fold_add(cols, 4, H, W, 3, 3, stride, stride, pad, pad)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_direct_conv_agrees():
    comp, fb = _both()
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 3, 8, 8))
    w = rng.normal(size=(5, 3, 3, 3))
    a = comp.conv2d_direct(x, w, 1, 1, 1, 1)
    b = fb.conv2d_direct(x, w, 1, 1, 1, 1)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_float32_kernels():
    comp, fb = _both()
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 2, 6, 6)).astype(np.float32)
    a = comp.unfold(x, 2, 2, 1, 1, 0, 0)
    b = fb.unfold(x, 2, 2, 1, 1, 0, 0)
    assert a.dtype == np.float32
    assert np.array_equal(a, b)


def test_unfold_matches_manual_window():
    fb = kernels.get_backend("fallback")
    x = np.arange(2 * 1 * 4 * 4, dtype=np.float64).reshape(2, 1, 4, 4)
    cols = fb.unfold(x, 2, 2, 1, 1, 0, 0)
    # point-major layout: window pixels in scan order, channels innermost
    np.testing.assert_array_equal(cols[0, 0, 0], [0, 1, 4, 5])
    np.testing.assert_array_equal(cols[0, 1, 2], [6, 7, 10, 11])
