import math

import numpy as np
import pytest

from sigrank import _pykernels as py
from sigrank import kernels

try:
    from sigrank import _kernels as cy
except ImportError:  # extension not built
    cy = None

needs_cy = pytest.mark.skipif(cy is None, reason="compiled extension not built")


def dtw_oracle(a, b):
    # textbook full-matrix recursion
    n, m = len(a), len(b)
    D = np.full((n + 1, m + 1), math.inf)
    D[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            c = math.dist(a[i - 1], b[j - 1])
            D[i, j] = c + min(D[i - 1, j], D[i, j - 1], D[i - 1, j - 1])
    return D[n, m]


def test_backend_name():
    assert kernels.BACKEND in ("python", "cython")


@pytest.mark.parametrize("impl", [py, pytest.param(cy, marks=needs_cy)], ids=["python", "cython"])
def test_dtw_against_oracle(impl):
    rng = np.random.default_rng(0)
    for n, m in ((1, 1), (3, 7), (12, 9)):
        a, b = rng.standard_normal((n, 2)), rng.standard_normal((m, 2))
        assert impl.dtw_distance(a, b) == pytest.approx(dtw_oracle(a, b), rel=1e-12)
    assert impl.dtw_distance(a, a) == 0.0


@pytest.mark.parametrize("impl", [py, pytest.param(cy, marks=needs_cy)], ids=["python", "cython"])
def test_dtw_errors(impl):
    with pytest.raises(ValueError):
        impl.dtw_distance(np.zeros((0, 2)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        impl.dtw_distance(np.zeros((2, 2)), np.zeros((3, 3)))


@needs_cy
def test_dp_parity():
    rng = np.random.default_rng(1)
    for n1, n2 in ((1, 1), (2, 5), (5, 10), (7, 3)):
        s1 = -np.sort(-rng.uniform(-1, 1, n1))
        s2 = -np.sort(-rng.uniform(-1, 1, n2))
        for e in (-10.0, -0.1, 0.5, 10.0):
            pa, va = py.loss_augmented_dp(s1, s2, e)
            pb, vb = cy.loss_augmented_dp(s1, s2, e)
            assert np.array_equal(pa, pb) and va == vb


@needs_cy
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_elementwise_parity(dtype):
    rng = np.random.default_rng(2)
    z = rng.standard_normal((3, 11, 5)).astype(dtype)
    lengths = np.array([11, 6, 1], dtype=np.int64)
    a_py, a_cy = py.selu_mask_forward(z, lengths), cy.selu_mask_forward(z, lengths)
    np.testing.assert_allclose(a_cy, a_py, rtol=1e-6 if dtype == np.float32 else 1e-14, atol=1e-7)
    dx = rng.standard_normal(z.shape).astype(dtype)
    np.testing.assert_allclose(cy.selu_mask_backward(dx, z, a_py, lengths),
                               py.selu_mask_backward(dx, z, a_py, lengths), rtol=1e-6, atol=1e-7)
    pl = lengths // 2
    o_py, arg_py = py.maxpool_forward(a_py, pl)
    o_cy, arg_cy = cy.maxpool_forward(a_py, pl)
    assert np.array_equal(o_py, o_cy) and np.array_equal(arg_py, arg_cy)
    d = rng.standard_normal(o_py.shape).astype(dtype)
    assert np.array_equal(py.maxpool_backward(d, arg_py, pl, 11), cy.maxpool_backward(d, arg_py, pl, 11))


def test_maxpool_ties_first_wins():
    x = np.array([[[1.0], [1.0], [0.0], [2.0]]])
    out, arg = py.maxpool_forward(x, np.array([2]))
    assert out.ravel().tolist() == [1.0, 2.0] and arg.ravel().tolist() == [0, 1]
