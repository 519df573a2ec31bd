"""The two kernel implementations must agree on every contract."""

import numpy as np
import pytest

from ssld._kernels import numpy_ref

_ckern = pytest.importorskip("ssld._kernels._ckern")

BACKENDS = [("numpy", numpy_ref), ("cython", _ckern)]

TOLS = {np.float64: dict(rtol=1e-10, atol=1e-12),
        np.float32: dict(rtol=2e-4, atol=2e-4)}


@pytest.mark.parametrize("dtype", [np.float64, np.float32])
@pytest.mark.parametrize("shape", [(1, 1, 3, 3, 1, 3), (2, 3, 8, 6, 4, 3),
                                   (3, 5, 10, 7, 2, 1), (1, 4, 16, 16, 8, 5)])
def test_conv2d_backends_agree(dtype, shape):
    b, c, h, w, o, k = shape
    rng = np.random.default_rng(hash(shape) % 2**32)
    x = rng.normal(size=(b, c, h, w)).astype(dtype)
    wt = rng.normal(size=(o, c, k, k)).astype(dtype)
    gy = rng.normal(size=(b, o, h, w)).astype(dtype)

    ya = numpy_ref.conv2d_forward(x, wt)
    yb = _ckern.conv2d_forward(x, wt)
    assert ya.shape == (b, o, h, w)
    np.testing.assert_allclose(ya, yb, **TOLS[dtype])

    np.testing.assert_allclose(numpy_ref.conv2d_backward_input(gy, wt),
                               _ckern.conv2d_backward_input(gy, wt),
                               **TOLS[dtype])
    np.testing.assert_allclose(numpy_ref.conv2d_backward_weight(x, gy, k, k),
                               _ckern.conv2d_backward_weight(x, gy, k, k),
                               **TOLS[dtype])


@pytest.mark.parametrize("dtype", [np.float64, np.float32])
@pytest.mark.parametrize("shape", [(1, 1, 1, 1), (2, 9, 4, 3), (3, 20, 8, 7),
                                   (2, 6, 5, 15)])
def test_dwconv1d_backends_agree(dtype, shape):
    b, t, c, k = shape
    rng = np.random.default_rng(hash(shape) % 2**32)
    x = rng.normal(size=(b, t, c)).astype(dtype)
    wt = rng.normal(size=(c, k)).astype(dtype)
    gy = rng.normal(size=(b, t, c)).astype(dtype)

    np.testing.assert_allclose(numpy_ref.dwconv1d_forward(x, wt),
                               _ckern.dwconv1d_forward(x, wt), **TOLS[dtype])
    np.testing.assert_allclose(numpy_ref.dwconv1d_backward_input(gy, wt),
                               _ckern.dwconv1d_backward_input(gy, wt),
                               **TOLS[dtype])
    np.testing.assert_allclose(numpy_ref.dwconv1d_backward_weight(x, gy, k),
                               _ckern.dwconv1d_backward_weight(x, gy, k),
                               **TOLS[dtype])


@pytest.mark.parametrize("_, impl", BACKENDS)
def test_even_kernel_rejected(_, impl):
    x = np.zeros((1, 1, 4, 4))
    w = np.zeros((1, 1, 2, 2))
    with pytest.raises(ValueError, match="odd"):
        impl.conv2d_forward(x, w)


@pytest.mark.parametrize("_, impl", BACKENDS)
def test_channel_mismatch_rejected(_, impl):
    with pytest.raises(ValueError, match="channel mismatch"):
        impl.conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)))
    with pytest.raises(ValueError, match="channel mismatch"):
        impl.dwconv1d_forward(np.zeros((1, 4, 2)), np.zeros((3, 3)))


def test_conv2d_matches_direct_sum():
    """Tiny direct triple-loop oracle, independent of both backends."""
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1, 2, 4, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    want = np.zeros((1, 3, 4, 5))
    for o in range(3):
        for i in range(4):
            for j in range(5):
                acc = 0.0
                for c in range(2):
                    for di in range(3):
                        for dj in range(3):
                            acc += w[o, c, di, dj] * xp[0, c, i + di, j + dj]
                want[0, o, i, j] = acc
    for _, impl in BACKENDS:
        np.testing.assert_allclose(impl.conv2d_forward(x, w), want, rtol=1e-12)
