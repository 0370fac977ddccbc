import numpy as np
import pytest

from bevpredict.ai import layers as L
from bevpredict.models import HeadType
from bevpredict.utils.errors import ShapeError


def numeric_grad(f, x, eps=1e-6):
    """Central differences of scalar f() with respect to every entry of x (perturbed in place)"""
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + eps
        plus = f()
        x[idx] = orig - eps
        minus = f()
        x[idx] = orig
        grad[idx] = (plus - minus) / (2 * eps)
    return grad


def rel_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def test_conv3x3_keeps_spatial_size(rng):
    out = L.conv3x3_forward(rng.normal(size=(2, 5, 7)), rng.normal(size=(4, 2, 3, 3)), np.zeros(4))
    assert out.shape == (4, 5, 7)


def test_conv3x3_zero_padding():
    x = np.zeros((1, 3, 3))
    x[0, 0, 0] = 1.0
    w = np.ones((1, 1, 3, 3))
    out = L.conv3x3_forward(x, w, np.zeros(1))
    assert out[0, 0, 0] == 1.0
    assert out[0, 1, 1] == 1.0
    assert out[0, 2, 2] == 0.0


def test_conv3x3_gradients(rng):
    x = rng.normal(size=(2, 4, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    r = rng.normal(size=(3, 4, 5))
    loss = lambda: float(np.sum(L.conv3x3_forward(x, w, b) * r))

    dx, dw, db = L.conv3x3_backward(r, x, w)
    assert rel_error(dx, numeric_grad(loss, x)) < 1e-7
    assert rel_error(dw, numeric_grad(loss, w)) < 1e-7
    assert rel_error(db, numeric_grad(loss, b)) < 1e-7


def test_conv1x1_gradients(rng):
    x = rng.normal(size=(3, 4, 4))
    w = rng.normal(size=(2, 3, 1, 1))
    b = rng.normal(size=2)
    r = rng.normal(size=(2, 4, 4))
    loss = lambda: float(np.sum(L.conv1x1_forward(x, w, b) * r))

    dx, dw, db = L.conv1x1_backward(r, x, w)
    assert rel_error(dx, numeric_grad(loss, x)) < 1e-7
    assert rel_error(dw, numeric_grad(loss, w)) < 1e-7
    assert rel_error(db, numeric_grad(loss, b)) < 1e-7


def test_upconv_doubles_and_gradients(rng):
    x = rng.normal(size=(3, 2, 3))
    w = rng.normal(size=(3, 2, 2, 2))
    b = rng.normal(size=2)
    assert L.upconv_forward(x, w, b).shape == (2, 4, 6)

    r = rng.normal(size=(2, 4, 6))
    loss = lambda: float(np.sum(L.upconv_forward(x, w, b) * r))
    dx, dw, db = L.upconv_backward(r, x, w)
    assert rel_error(dx, numeric_grad(loss, x)) < 1e-7
    assert rel_error(dw, numeric_grad(loss, w)) < 1e-7
    assert rel_error(db, numeric_grad(loss, b)) < 1e-7


def test_upconv_places_each_kernel_tap():
    x = np.array([[[2.0]]])
    w = np.arange(4, dtype=np.float64).reshape(1, 1, 2, 2)
    out = L.upconv_forward(x, w, np.zeros(1))
    np.testing.assert_array_equal(out[0], [[0.0, 2.0], [4.0, 6.0]])


class TestMaxPool:
    def test_halves_and_takes_block_max(self):
        x = np.arange(16, dtype=np.float64).reshape(1, 4, 4)
        out, _ = L.maxpool_forward(x)
        np.testing.assert_array_equal(out[0], [[5.0, 7.0], [13.0, 15.0]])

    def test_tie_goes_to_first_element(self):
        x = np.array([[[1.0, 1.0], [0.0, 1.0]]])
        _, argmax = L.maxpool_forward(x)
        assert argmax[0, 0, 0] == 0

    def test_gradient_routes_to_argmax(self, rng):
        x = rng.normal(size=(2, 4, 6))
        r = rng.normal(size=(2, 2, 3))
        out, argmax = L.maxpool_forward(x)
        loss = lambda: float(np.sum(L.maxpool_forward(x)[0] * r))
        dx = L.maxpool_backward(r, argmax)
        assert dx.shape == x.shape
        assert np.count_nonzero(dx) == r.size
        assert rel_error(dx, numeric_grad(loss, x)) < 1e-7

    def test_odd_size_rejected(self):
        with pytest.raises(ShapeError):
            L.maxpool_forward(np.zeros((1, 3, 4)))


def test_relu_gradient(rng):
    x = rng.normal(size=(2, 3, 3))
    x = np.sign(x) * (0.1 + np.abs(x))
    r = rng.normal(size=x.shape)
    loss = lambda: float(np.sum(L.relu_forward(x) * r))
    assert rel_error(L.relu_backward(r, x), numeric_grad(loss, x)) < 1e-7


def test_concat_order_and_split(rng):
    skip = rng.normal(size=(2, 4, 4))
    x = rng.normal(size=(3, 4, 4))
    out = L.concat_forward(skip, x)
    np.testing.assert_array_equal(out[:2], skip)
    dskip, dx = L.concat_backward(out, 2)
    np.testing.assert_array_equal(dskip, skip)
    np.testing.assert_array_equal(dx, x)

    with pytest.raises(ShapeError):
        L.concat_forward(skip, rng.normal(size=(3, 2, 2)))


@pytest.mark.parametrize("head", list(HeadType))
def test_head_gradients(head):
    # Away from the clipped-ReLU kinks at 0 and 1
    x = np.array([[[-1.3, -0.4, 0.2], [0.55, 0.9, 1.6]]])
    r = np.array([[[0.3, -1.1, 0.7], [2.0, -0.5, 1.4]]])
    loss = lambda: float(np.sum(L.head_forward(x, head) * r))
    analytic = L.head_backward(r, x, L.head_forward(x, head), head)
    assert rel_error(analytic, numeric_grad(loss, x)) < 1e-7


def test_head_ranges():
    x = np.linspace(-5.0, 5.0, 21).reshape(1, 3, 7)
    tanh = L.head_forward(x, HeadType.TANH)
    clipped = L.head_forward(x, HeadType.CLIPPED_RELU)
    assert np.all(np.abs(tanh) < 1.0)
    assert clipped.min() == 0.0 and clipped.max() == 1.0
    np.testing.assert_array_equal(L.head_forward(x, HeadType.LINEAR), x)


def test_tanh_head_gradient_is_bounded_by_upstream(rng):
    x = rng.normal(scale=3.0, size=(2, 4, 4))
    r = rng.normal(size=x.shape)
    grad = L.head_backward(r, x, np.tanh(x), HeadType.TANH)
    assert np.all(np.abs(grad) <= np.abs(r))


def test_channel_mismatch_rejected(rng):
    with pytest.raises(ShapeError):
        L.conv3x3_forward(rng.normal(size=(3, 4, 4)), rng.normal(size=(2, 2, 3, 3)), np.zeros(2))
    with pytest.raises(ShapeError):
        L.upconv_forward(rng.normal(size=(3, 4, 4)), rng.normal(size=(2, 2, 2, 2)), np.zeros(2))
