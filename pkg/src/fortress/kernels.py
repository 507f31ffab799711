"""Hot numeric kernels: im2col/col2im and B-spline basis evaluation.

Each kernel has a numba-compiled version and a pure-numpy fallback.
Set the environment variable FORTRESS_NO_NUMBA=1 to force the numpy path
(useful on platforms without a working numba, and for benchmarking; see
benchmarks/bench_kernels.py).

Both paths are deterministic: loops run in a fixed order and the only
parallel axis (batch) carries no cross-iteration reduction.
"""

import os

import numpy as np

USE_NUMBA = os.environ.get("FORTRESS_NO_NUMBA", "0") != "1"

if USE_NUMBA:
    try:
        from numba import njit, prange
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False

__all__ = ["USE_NUMBA", "im2col", "col2im", "bspline_design", "make_knots"]


# ---------------------------------------------------------------------------
# im2col / col2im


def _im2col_np(xp, k, stride, ho, wo):
    n, c, _, _ = xp.shape
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (n, c, ho, wo, k, k)
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, ho * wo)
    return np.ascontiguousarray(cols)


def _col2im_np(cols, k, stride, hp, wp, ho, wo):
    n = cols.shape[0]
    c = cols.shape[1] // (k * k)
    xp = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(n, c, k, k, ho, wo)
    for ki in range(k):
        for kj in range(k):
            xp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += cols[
                :, :, ki, kj
            ]
    return xp


if USE_NUMBA:

    @njit(cache=True, parallel=True)
    def _im2col_nb(xp, k, stride, ho, wo, out):
        n_, c_, _, _ = xp.shape
        for nn in prange(n_):
            for c in range(c_):
                for ki in range(k):
                    for kj in range(k):
                        row = c * k * k + ki * k + kj
                        for i in range(ho):
                            base = i * stride + ki
                            for j in range(wo):
                                out[nn, row, i * wo + j] = xp[nn, c, base, j * stride + kj]

    @njit(cache=True, parallel=True)
    def _col2im_nb(cols, k, stride, ho, wo, xp):
        n_, c_ = xp.shape[0], xp.shape[1]
        for nn in prange(n_):
            for c in range(c_):
                for ki in range(k):
                    for kj in range(k):
                        row = c * k * k + ki * k + kj
                        for i in range(ho):
                            base = i * stride + ki
                            for j in range(wo):
                                xp[nn, c, base, j * stride + kj] += cols[nn, row, i * wo + j]


def im2col(xp, k, stride, ho, wo):
    """Unfold padded input (N,C,Hp,Wp) into columns (N, C*k*k, ho*wo)."""
    if USE_NUMBA:
        n, c = xp.shape[0], xp.shape[1]
        out = np.empty((n, c * k * k, ho * wo), dtype=xp.dtype)
        _im2col_nb(np.ascontiguousarray(xp), k, stride, ho, wo, out)
        return out
    return _im2col_np(xp, k, stride, ho, wo)


def col2im(cols, k, stride, hp, wp, ho, wo):
    """Fold columns back onto a zeroed padded input, accumulating overlaps."""
    if USE_NUMBA:
        n = cols.shape[0]
        c = cols.shape[1] // (k * k)
        xp = np.zeros((n, c, hp, wp), dtype=cols.dtype)
        _col2im_nb(np.ascontiguousarray(cols), k, stride, ho, wo, xp)
        return xp
    return _col2im_np(cols, k, stride, hp, wp, ho, wo)


# ---------------------------------------------------------------------------
# B-spline basis (clamped uniform knots on [0, 1])


def make_knots(grid_size, order, dtype=np.float64):
    """Uniform knot vector over [0,1] with `order` repeated boundary knots."""
    interior = np.linspace(0.0, 1.0, grid_size + 1, dtype=dtype)
    return np.concatenate(
        [np.zeros(order, dtype=dtype), interior, np.ones(order, dtype=dtype)]
    )


def _bspline_np(x, knots, order):
    m = x.shape[0]
    nk = knots.shape[0]
    n0 = nk - 1
    b = ((x[:, None] >= knots[None, :-1]) & (x[:, None] < knots[None, 1:])).astype(x.dtype)
    # x at (or past) the right end belongs to the last non-empty interval
    last = nk - 2 - order
    b[x >= knots[-1], :] = 0.0
    b[x >= knots[-1], last] = 1.0
    prev = b
    lower = b
    for d in range(1, order + 1):
        nb = n0 - d
        cur = np.zeros((m, nb), dtype=x.dtype)
        for i in range(nb):
            dl = knots[i + d] - knots[i]
            dr = knots[i + d + 1] - knots[i + 1]
            if dl > 0:
                cur[:, i] += (x - knots[i]) / dl * prev[:, i]
            if dr > 0:
                cur[:, i] += (knots[i + d + 1] - x) / dr * prev[:, i + 1]
        if d == order:
            lower = prev
        prev = cur
    basis = prev
    nb = basis.shape[1]
    deriv = np.zeros_like(basis)
    if order >= 1:
        for i in range(nb):
            dl = knots[i + order] - knots[i]
            dr = knots[i + order + 1] - knots[i + 1]
            if dl > 0:
                deriv[:, i] += order / dl * lower[:, i]
            if dr > 0:
                deriv[:, i] -= order / dr * lower[:, i + 1]
    return basis, deriv


if USE_NUMBA:

    @njit(cache=True, parallel=True)
    def _bspline_nb(x, knots, order, grid_size, basis, deriv):
        # local-support de Boor: only the order+1 basis functions covering
        # x's knot interval are nonzero, so work is O(order^2) per element
        m = x.shape[0]
        for t in prange(m):
            xv = x[t]
            j = int(xv * grid_size)
            if j >= grid_size:
                j = grid_size - 1
            j += order  # knot interval [knots[j], knots[j+1]) is non-empty
            nvals = np.zeros(order + 1, dtype=x.dtype)
            nlow = np.zeros(order + 1, dtype=x.dtype)
            left = np.zeros(order + 1, dtype=x.dtype)
            right = np.zeros(order + 1, dtype=x.dtype)
            nvals[0] = 1.0
            if order == 1:
                nlow[0] = 1.0
            for d in range(1, order + 1):
                left[d] = xv - knots[j + 1 - d]
                right[d] = knots[j + d] - xv
                saved = 0.0
                for r in range(d):
                    temp = nvals[r] / (right[r + 1] + left[d - r])
                    nvals[r] = saved + right[r + 1] * temp
                    saved = left[d - r] * temp
                nvals[d] = saved
                if d == order - 1:
                    for r in range(order):
                        nlow[r] = nvals[r]
            for r in range(order + 1):
                i = j - order + r
                basis[t, i] = nvals[r]
                g = 0.0
                if r < order:
                    # nlow[r] is B_{j-order+1+r, order-1}
                    dr_den = knots[i + order + 1] - knots[i + 1]
                    if dr_den > 0:
                        g -= order / dr_den * nlow[r]
                if r > 0:
                    dl_den = knots[i + order] - knots[i]
                    if dl_den > 0:
                        g += order / dl_den * nlow[r - 1]
                deriv[t, i] = g


def bspline_design(x, grid_size, order, knots=None):
    """Evaluate all G+O basis functions and their derivatives at each x.

    x must be a flat array already clamped to [0, 1]. Returns a pair of
    (len(x), grid_size + order) arrays: basis values and d/dx values.
    """
    if knots is None:
        knots = make_knots(grid_size, order, dtype=x.dtype)
    else:
        knots = knots.astype(x.dtype, copy=False)
    if USE_NUMBA:
        m = x.shape[0]
        nb = grid_size + order
        basis = np.zeros((m, nb), dtype=x.dtype)
        deriv = np.zeros((m, nb), dtype=x.dtype)
        _bspline_nb(np.ascontiguousarray(x), knots, order, grid_size, basis, deriv)
        return basis, deriv
    return _bspline_np(x, knots, order)
