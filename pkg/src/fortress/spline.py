"""Scalar B-spline API: clamped uniform basis on [0, 1] and curve evaluation."""

import numpy as np

from .errors import ConfigurationError
from .kernels import bspline_design, make_knots


def bspline_basis(x, grid_size, order, grid=None):
    """All grid_size + order basis values at x (clamped to [0, 1])."""
    if grid_size < 1 or order < 1:
        raise ConfigurationError("grid_size and order must be >= 1")
    xv = np.clip(np.asarray([x], dtype=np.float64), 0.0, 1.0)
    knots = grid if grid is not None else make_knots(grid_size, order)
    basis, _ = bspline_design(xv, grid_size, order, knots)
    return basis[0]


def spline_eval(x, control, grid_size, order):
    """Dot product of control points with the basis at x."""
    control = np.asarray(control, dtype=np.float64)
    if control.shape != (grid_size + order,):
        raise ConfigurationError(
            f"control must have length {grid_size + order}, got {control.shape}"
        )
    return float(bspline_basis(x, grid_size, order) @ control)
