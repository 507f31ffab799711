"""B-spline basis tests: analytic properties and kernel-path agreement."""

import numpy as np
import pytest

from fortress import kernels as K
from fortress.errors import ConfigurationError
from fortress.spline import bspline_basis, spline_eval


@pytest.mark.parametrize("grid_size,order", [(5, 3), (2, 1), (8, 3)])
class TestBasisProperties:
    def test_partition_of_unity(self, grid_size, order):
        rng = np.random.default_rng(0)
        xs = rng.uniform(0.0, 1.0, 1000)
        for x in xs:
            s = bspline_basis(x, grid_size, order).sum()
            assert abs(s - 1.0) < 1e-6

    def test_non_negative_and_local(self, grid_size, order):
        rng = np.random.default_rng(1)
        for x in rng.uniform(0.0, 1.0, 50):
            b = bspline_basis(x, grid_size, order)
            assert b.min() >= -1e-12
            assert (b > 1e-12).sum() <= order + 1

    def test_constant_reproduction(self, grid_size, order):
        rng = np.random.default_rng(2)
        ctrl = np.full(grid_size + order, 1.37)
        for x in rng.uniform(0.0, 1.0, 200):
            assert abs(spline_eval(x, ctrl, grid_size, order) - 1.37) < 1e-9

    def test_endpoint_interpolation(self, grid_size, order):
        # a clamped spline passes through its first and last control points
        rng = np.random.default_rng(3)
        ctrl = rng.uniform(-1.0, 1.0, grid_size + order)
        assert abs(spline_eval(0.0, ctrl, grid_size, order) - ctrl[0]) < 1e-12
        assert abs(spline_eval(1.0, ctrl, grid_size, order) - ctrl[-1]) < 1e-12

    def test_derivative_matches_finite_difference(self, grid_size, order):
        rng = np.random.default_rng(4)
        ctrl = rng.uniform(-1.0, 1.0, grid_size + order)
        knots = K.make_knots(grid_size, order)
        eps = 1e-6
        # random points keep clear of the knots, where low orders are
        # not differentiable
        for x in rng.uniform(0.02, 0.98, 25):
            _, d = K.bspline_design(np.asarray([x]), grid_size, order, knots)
            fd = (spline_eval(x + eps, ctrl, grid_size, order)
                  - spline_eval(x - eps, ctrl, grid_size, order)) / (2 * eps)
            assert abs(float(d[0] @ ctrl) - fd) < 1e-5


class TestKernelPaths:
    @pytest.mark.parametrize("grid_size,order", [(5, 3), (2, 1), (8, 3), (4, 2)])
    def test_numba_and_numpy_paths_agree(self, grid_size, order):
        rng = np.random.default_rng(5)
        x = rng.uniform(0.0, 1.0, 4000)
        x[:4] = [0.0, 1.0, 0.25, 0.75]
        knots = K.make_knots(grid_size, order)
        b_ref, d_ref = K._bspline_np(x, knots, order)
        b, d = K.bspline_design(x, grid_size, order, knots)
        np.testing.assert_allclose(b, b_ref, atol=1e-12)
        np.testing.assert_allclose(d, d_ref, atol=1e-10)

    def test_im2col_paths_agree(self):
        rng = np.random.default_rng(6)
        xp = rng.standard_normal((2, 3, 9, 9)).astype(np.float32)
        for k, stride in [(3, 1), (3, 2), (5, 1), (1, 1)]:
            ho = (9 - k) // stride + 1
            cols_ref = K._im2col_np(xp, k, stride, ho, ho)
            np.testing.assert_array_equal(K.im2col(xp, k, stride, ho, ho), cols_ref)

    def test_col2im_paths_agree(self):
        rng = np.random.default_rng(7)
        for k, stride in [(3, 1), (3, 2)]:
            ho = (9 - k) // stride + 1
            cols = rng.standard_normal((2, 3 * k * k, ho * ho)).astype(np.float32)
            ref = K._col2im_np(cols, k, stride, 9, 9, ho, ho)
            np.testing.assert_allclose(K.col2im(cols, k, stride, 9, 9, ho, ho), ref, atol=1e-5)

    def test_clamping_out_of_range(self):
        # values past the ends evaluate like the endpoints
        lo = bspline_basis(-0.5, 5, 3)
        hi = bspline_basis(1.5, 5, 3)
        np.testing.assert_allclose(lo, bspline_basis(0.0, 5, 3), atol=1e-12)
        np.testing.assert_allclose(hi, bspline_basis(1.0, 5, 3), atol=1e-12)


class TestValidation:
    def test_bad_sizes_rejected(self):
        with pytest.raises(ConfigurationError):
            bspline_basis(0.5, 0, 3)
        with pytest.raises(ConfigurationError):
            spline_eval(0.5, np.zeros(5), 5, 3)
