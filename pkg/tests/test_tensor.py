import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from msce.tensor import (PoolKind, ReduceKind, ShapeError, pool1d, pool1d_backward, pool2d,
                         pool2d_backward, reduce_axes, reduce_axes_backward)

from conftest import fd_grad, max_rel

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def brute_pool2d(x, kind):
    h, w = x.shape
    out = np.zeros((h // 2, w // 2))
    for i in range(h // 2):
        for j in range(w // 2):
            win = [x[2 * i + a, 2 * j + b] for a in (0, 1) for b in (0, 1)]
            out[i, j] = max(win) if kind is PoolKind.MAX else sum(win) / 4
    return out


def test_pool2d_single_window():
    x = [[1, 3], [2, 0]]
    assert pool2d(x, PoolKind.MAX).tolist() == [[3.0]]
    assert pool2d(x, PoolKind.AVERAGE).tolist() == [[1.5]]


def test_pool2d_ramp():
    x = np.arange(16.0).reshape(4, 4)
    assert pool2d(x, PoolKind.MAX).tolist() == [[5, 7], [13, 15]]
    for kind in PoolKind:
        np.testing.assert_array_equal(pool2d(x, kind), brute_pool2d(x, kind))


@pytest.mark.parametrize("shape", [(3, 4), (4, 3), (0, 2), (1, 2), (2, 0)])
def test_pool2d_shape_errors(shape):
    with pytest.raises(ShapeError):
        pool2d(np.zeros(shape), PoolKind.MAX)


def test_pool2d_batched_matches_per_map():
    x = np.random.default_rng(0).standard_normal((3, 2, 6, 4))
    for kind in PoolKind:
        out = pool2d(x, kind)
        for i in range(3):
            for j in range(2):
                np.testing.assert_array_equal(out[i, j], brute_pool2d(x[i, j], kind))


def test_pool1d():
    assert pool1d([1, 3, 2, 0], PoolKind.MAX).tolist() == [3, 2]
    assert pool1d([1, 3, 2, 0], PoolKind.AVERAGE).tolist() == [2, 1]
    one_hot = np.zeros(256)
    one_hot[70] = 1
    expected = np.zeros(128)
    expected[35] = 1
    np.testing.assert_array_equal(pool1d(one_hot, PoolKind.MAX), expected)
    with pytest.raises(ShapeError):
        pool1d([1, 2, 3], PoolKind.MAX)


@given(t=st.integers(0, 255), amp=st.floats(1e-3, 1e3))
def test_pool1d_one_hot_property(t, amp):
    v = np.zeros(256)
    v[t] = amp
    expected = np.zeros(128)
    expected[t // 2] = amp
    np.testing.assert_array_equal(pool1d(v, PoolKind.MAX), expected)


def test_reduce_axes_examples():
    x = [[1, 2], [3, 4]]
    gx, gy = reduce_axes(x, ReduceKind.SUM)
    assert gx.tolist() == [4, 6] and gy.tolist() == [3, 7]
    gx, gy = reduce_axes(x, ReduceKind.MEAN)
    assert gx.tolist() == [2, 3] and gy.tolist() == [1.5, 3.5]
    gx, gy = reduce_axes(np.zeros((3, 5)), ReduceKind.SUM)
    assert gx.shape == (5,) and gy.shape == (3,) and not gx.any() and not gy.any()


def test_pool2d_backward_examples():
    g = pool2d_backward([[1, 3], [2, 0]], PoolKind.MAX, [[1]])
    assert g.tolist() == [[0, 1], [0, 0]]
    g = pool2d_backward(np.random.default_rng(1).standard_normal((2, 2)), PoolKind.AVERAGE, [[4]])
    assert g.tolist() == [[1, 1], [1, 1]]


def test_max_pool_backward_ties_route_to_first():
    g = pool2d_backward(np.ones((2, 2)), PoolKind.MAX, [[5.0]])
    assert g.tolist() == [[5, 0], [0, 0]]
    g = pool1d_backward([2.0, 2.0], PoolKind.MAX, [1.0])
    assert g.tolist() == [1, 0]


def test_pool_backward_shape_mismatch():
    with pytest.raises(ShapeError):
        pool2d_backward(np.zeros((4, 4)), PoolKind.MAX, np.zeros((3, 2)))
    with pytest.raises(ShapeError):
        pool1d_backward(np.zeros(4), PoolKind.MAX, np.zeros(3))
    with pytest.raises(ShapeError):
        reduce_axes_backward(ReduceKind.SUM, np.zeros((2, 3)), np.zeros((3, 3)))


def test_reduce_axes_backward_examples():
    g = reduce_axes_backward(ReduceKind.SUM, [1, 0], [0, 0])
    assert g.tolist() == [[1, 0], [1, 0]]
    g = reduce_axes_backward(ReduceKind.MEAN, [2, 2], [0, 0])
    assert g.tolist() == [[1, 1], [1, 1]]


@pytest.mark.parametrize("seed", range(20))
def test_kernel_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    for kind in PoolKind:
        x = rng.standard_normal((4, 4))
        r = rng.standard_normal((2, 2))
        num = fd_grad(lambda z: float((r * pool2d(z, kind)).sum()), x)
        assert max_rel(pool2d_backward(x, kind, r), num) < 1e-5
        v = rng.standard_normal(8)
        r1 = rng.standard_normal(4)
        num = fd_grad(lambda z: float(r1 @ pool1d(z, kind)), v)
        assert max_rel(pool1d_backward(v, kind, r1), num) < 1e-5
    for kind in ReduceKind:
        x = rng.standard_normal((3, 5))
        rx, ry = rng.standard_normal(5), rng.standard_normal(3)

        def f(z):
            gx, gy = reduce_axes(z, kind)
            return float(rx @ gx + ry @ gy)
        assert max_rel(reduce_axes_backward(kind, rx, ry), fd_grad(f, x)) < 1e-5


even = st.integers(1, 4).map(lambda k: 2 * k)


@given(st.data())
@settings(max_examples=50)
def test_pool2d_value_properties(data):
    h, w = data.draw(even), data.draw(even)
    x = data.draw(arrays(np.float64, (h, w), elements=finite))
    mx = pool2d(x, PoolKind.MAX)
    assert np.isin(mx, x).all()
    avg = pool2d(x, PoolKind.AVERAGE)
    assert (avg >= x.min() - 1e-9).all() and (avg <= x.max() + 1e-9).all()
    assert np.isfinite(mx).all() and np.isfinite(avg).all()


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite))
@settings(max_examples=50)
def test_reduce_sum_conserves_total(x):
    gx, gy = reduce_axes(x, ReduceKind.SUM)
    total = x.sum()
    scale = max(np.abs(x).sum(), 1e-300)
    assert abs(gx.sum() - total) <= 1e-9 * scale
    assert abs(gy.sum() - total) <= 1e-9 * scale
