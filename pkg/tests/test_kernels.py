"""Both kernel backends against the nested-loop oracle and each other."""

import numpy as np
import pytest

from lumenseg.kernels import cython_backend, numpy_backend

from oracles import conv2d_loops, conv3d_loops

BACKENDS = [numpy_backend, cython_backend]


def _backend_id(b):
    return b.NAME


@pytest.mark.parametrize("backend", BACKENDS, ids=_backend_id)
class TestConv2d:
    def test_identity_1x1(self, backend):
        x = np.array([[[3.5]]])
        w = np.array([[[[-2.0]]]])
        y = backend.conv2d_forward(x[None], w, 1, 0)[0]
        assert y.shape == (1, 1, 1)
        assert y[0, 0, 0] == 3.5 * -2.0

    def test_constant_field(self, backend):
        x = np.ones((1, 4, 4, 1))
        w = np.ones((3, 3, 1, 1))
        y = backend.conv2d_forward(x, w, 1, 0)[0]
        assert y.shape == (2, 2, 1)
        assert np.all(y == 9.0)

    def test_matches_loop_oracle(self, backend):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(5, 5, 2))
        w = rng.normal(size=(3, 3, 2, 4))
        got = backend.conv2d_forward(x[None], w, 1, 0)[0]
        want = conv2d_loops(x, w)
        assert np.abs(got - want).max() < 1e-6

    @pytest.mark.parametrize("stride,padding,kh", [(1, 0, 3), (1, 1, 3), (2, 1, 3), (2, 2, 5), (1, 0, 1), (3, 0, 2)])
    def test_random_shapes(self, backend, stride, padding, kh):
        rng = np.random.default_rng(stride * 10 + padding + kh)
        for _ in range(3):
            p = int(rng.integers(kh, 12))
            q = int(rng.integers(kh, 12))
            ci = int(rng.integers(1, 4))
            co = int(rng.integers(1, 5))
            x = rng.normal(size=(p, q, ci))
            w = rng.normal(size=(kh, kh, ci, co))
            got = backend.conv2d_forward(x[None], w, stride, padding)[0]
            want = conv2d_loops(x, w, stride, padding)
            assert got.shape == want.shape
            ph = (p + 2 * padding - kh) // stride + 1
            assert got.shape[0] == ph
            assert np.abs(got - want).max() < 1e-6

    def test_linearity(self, backend):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(1, 6, 6, 2))
        y = rng.normal(size=(1, 6, 6, 2))
        w = rng.normal(size=(3, 3, 2, 3))
        a, b = 1.7, -0.4
        lhs = backend.conv2d_forward(a * x + b * y, w, 1, 1)
        rhs = a * backend.conv2d_forward(x, w, 1, 1) + b * backend.conv2d_forward(y, w, 1, 1)
        assert np.abs(lhs - rhs).max() < 1e-6

    def test_backward_matches_loop_oracle(self, backend):
        # d(sum(g*y))/dx and /dw probed against loop-convolutions of shifted inputs
        rng = np.random.default_rng(9)
        x = rng.normal(size=(4, 5, 2))
        w = rng.normal(size=(3, 3, 2, 3))
        gy = rng.normal(size=(2, 3, 3))
        gx, gw = backend.conv2d_backward(x[None], w, gy[None], 1, 0)
        # finite differences on the loop oracle
        eps = 1e-6
        for idx in [(0, 0, 0), (1, 2, 1), (3, 4, 1)]:
            xp = x.copy()
            xp[idx] += eps
            xm = x.copy()
            xm[idx] -= eps
            num = ((conv2d_loops(xp, w) - conv2d_loops(xm, w)) * gy).sum() / (2 * eps)
            assert abs(gx[0][idx] - num) < 1e-5
        for idx in [(0, 0, 0, 0), (2, 1, 1, 2)]:
            wp = w.copy()
            wp[idx] += eps
            wm = w.copy()
            wm[idx] -= eps
            num = ((conv2d_loops(x, wp) - conv2d_loops(x, wm)) * gy).sum() / (2 * eps)
            assert abs(gw[idx] - num) < 1e-5


@pytest.mark.parametrize("backend", BACKENDS, ids=_backend_id)
class TestConv3d:
    def test_shape_contract(self, backend):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(1, 3, 64, 64, 3)).astype(np.float32)
        w = rng.normal(size=(3, 3, 3, 3, 8)).astype(np.float32)
        y = backend.conv3d_forward(x, w)
        assert y.shape == (1, 1, 62, 62, 8)

    def test_constant_field(self, backend):
        x = np.ones((1, 1, 3, 3, 1))
        w = np.ones((1, 3, 3, 1, 1))
        y = backend.conv3d_forward(x, w)
        assert y.shape == (1, 1, 1, 1, 1)
        assert y.ravel()[0] == 9.0

    def test_matches_loop_oracle(self, backend):
        rng = np.random.default_rng(13)
        x = rng.normal(size=(3, 7, 7, 2))
        w = rng.normal(size=(3, 3, 3, 2, 5))
        got = backend.conv3d_forward(x[None], w)[0]
        want = conv3d_loops(x, w)
        assert np.abs(got - want).max() < 1e-6

    def test_temporal_collapse_property(self, backend):
        rng = np.random.default_rng(21)
        for _ in range(5):
            r = int(rng.integers(1, 5))
            p = int(rng.integers(8, 20))
            q = int(rng.integers(8, 20))
            nk = int(rng.choice([3, 8, 16]))
            x = rng.normal(size=(1, r, p, q, 2))
            w = rng.normal(size=(r, 3, 3, 2, nk))
            y = backend.conv3d_forward(x, w)
            assert y.shape == (1, 1, p - 2, q - 2, nk)

    def test_backward_matches_loop_oracle(self, backend):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(3, 6, 6, 2))
        w = rng.normal(size=(3, 3, 3, 2, 4))
        gy = rng.normal(size=(1, 4, 4, 4))
        gx, gw = backend.conv3d_backward(x[None], w, gy[None])
        assert gx.shape == (1,) + x.shape
        assert gw.shape == w.shape
        eps = 1e-6
        for idx in [(0, 0, 0, 0), (1, 3, 2, 1), (2, 5, 5, 0)]:
            xp = x.copy()
            xp[idx] += eps
            xm = x.copy()
            xm[idx] -= eps
            num = ((conv3d_loops(xp, w) - conv3d_loops(xm, w)) * gy).sum() / (2 * eps)
            assert abs(gx[0][idx] - num) < 1e-5
        for idx in [(0, 0, 0, 0, 0), (2, 1, 2, 1, 3)]:
            wp = w.copy()
            wp[idx] += eps
            wm = w.copy()
            wm[idx] -= eps
            num = ((conv3d_loops(x, wp) - conv3d_loops(x, wm)) * gy).sum() / (2 * eps)
            assert abs(gw[idx] - num) < 1e-5


def test_backends_agree():
    rng = np.random.default_rng(31)
    x = rng.normal(size=(2, 9, 8, 3))
    w = rng.normal(size=(3, 3, 3, 5))
    ya = numpy_backend.conv2d_forward(x, w, 2, 1)
    yb = cython_backend.conv2d_forward(x, w, 2, 1)
    assert np.allclose(ya, yb, rtol=1e-12, atol=1e-12)
    gy = rng.normal(size=ya.shape)
    ga = numpy_backend.conv2d_backward(x, w, gy, 2, 1)
    gb = cython_backend.conv2d_backward(x, w, gy, 2, 1)
    assert np.allclose(ga[0], gb[0], rtol=1e-12, atol=1e-12)
    assert np.allclose(ga[1], gb[1], rtol=1e-12, atol=1e-12)

    x3 = rng.normal(size=(2, 3, 7, 9, 2))
    w3 = rng.normal(size=(3, 3, 3, 2, 4))
    za = numpy_backend.conv3d_forward(x3, w3)
    zb = cython_backend.conv3d_forward(x3, w3)
    assert np.allclose(za, zb, rtol=1e-12, atol=1e-12)


def test_float32_paths():
    rng = np.random.default_rng(17)
    x = rng.normal(size=(1, 6, 6, 2)).astype(np.float32)
    w = rng.normal(size=(3, 3, 2, 3)).astype(np.float32)
    for backend in BACKENDS:
        y = backend.conv2d_forward(x, w, 1, 1)
        assert y.dtype == np.float32
        want = conv2d_loops(x[0].astype(np.float64), w.astype(np.float64), 1, 1)
        assert np.abs(y[0] - want).max() < 1e-4
