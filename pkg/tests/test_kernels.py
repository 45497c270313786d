"""Both kernel lanes must agree numerically (the engine treats them as twins)."""

import numpy as np
import numpy.testing as npt
import pytest

from mgrdenoise.engine import backend, kernels_numpy as lane_np
from mgrdenoise.engine.rng import make_rng

lane_cy = pytest.importorskip("mgrdenoise._kernels",
                              reason="compiled kernel lane not built")


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("stride", [1, 2])
def test_im2col_col2im_lanes_identical(dtype, stride):
    rng = make_rng(0)
    n, c, h, w, k = 2, 3, 9, 11, 3
    oh = (h + 2 - k) // stride + 1
    ow = (w + 2 - k) // stride + 1
    xp = np.ascontiguousarray(rng.standard_normal((n, c, h + 2, w + 2)).astype(dtype))
    a = lane_np.im2col(xp, k, stride, oh, ow)
    b = lane_cy.im2col(xp, k, stride, oh, ow)
    npt.assert_array_equal(a, b)
    cols = np.ascontiguousarray(rng.standard_normal(a.shape).astype(dtype))
    ga = lane_np.col2im(cols, n, c, h + 2, w + 2, k, stride, oh, ow)
    gb = lane_cy.col2im(cols, n, c, h + 2, w + 2, k, stride, oh, ow)
    npt.assert_array_equal(ga, gb)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_pool_and_upsample_lanes_identical(dtype):
    rng = make_rng(1)
    x = np.ascontiguousarray(rng.standard_normal((2, 3, 8, 6)).astype(dtype))
    ya, ia = lane_np.maxpool2_forward(x)
    yb, ib = lane_cy.maxpool2_forward(x)
    npt.assert_array_equal(ya, yb)
    npt.assert_array_equal(ia, ib)
    g = np.ascontiguousarray(rng.standard_normal(ya.shape).astype(dtype))
    npt.assert_array_equal(lane_np.maxpool2_backward(g, ia, 8, 6),
                           lane_cy.maxpool2_backward(g, ib, 8, 6))
    npt.assert_array_equal(lane_np.upsample2_forward(x), lane_cy.upsample2_forward(x))
    gu = np.ascontiguousarray(rng.standard_normal((2, 3, 8, 6)).astype(dtype))
    # summation association differs by at most 1 ulp between the lanes
    npt.assert_allclose(lane_np.upsample2_backward(gu), lane_cy.upsample2_backward(gu),
                        rtol=1e-6 if dtype == np.float32 else 1e-14)


def test_im2col_adjoint_of_col2im():
    # <im2col(x), c> == <x, col2im(c)> for random x, c (adjoint pair)
    rng = make_rng(2)
    n, ch, hp, wp, k = 1, 2, 8, 8, 3
    oh = ow = hp - k + 1
    x = rng.standard_normal((n, ch, hp, wp))
    c = rng.standard_normal((n, ch * k * k, oh * ow))
    lhs = float((lane_np.im2col(np.ascontiguousarray(x), k, 1, oh, ow) * c).sum())
    rhs = float((x * lane_np.col2im(np.ascontiguousarray(c), n, ch, hp, wp, k, 1, oh, ow)).sum())
    npt.assert_allclose(lhs, rhs, rtol=1e-12)


def test_backend_selection_reports_lane():
    assert backend.backend_name() in ("cython", "numpy")
