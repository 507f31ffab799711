"""Deterministic rank-4 tensor engine with tape-based reverse-mode autodiff.

Tensors are dense (N, C, H, W) arrays in float32 or float64. Every op is a
pure function of its inputs; when a Tape is active and an input requires
gradients, the op records a node so `backward` can replay the tape in
reverse. Accumulation order is the fixed tape order, so results are
bitwise reproducible.
"""

import numpy as np

from .errors import ConfigurationError, DataError, NumericError
from .kernels import bspline_design, col2im, im2col, make_knots

FINITE_CHECKS = True

_TAPE_STACK = []


class Tensor:
    """Dense (N, C, H, W) value, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        data = np.asarray(data)
        if data.ndim != 4:
            raise ConfigurationError(f"tensor must be rank-4, got shape {data.shape}")
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float64)
        self.data = data
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self):
        return Tensor(self.data, requires_grad=False, name=self.name)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class Node:
    __slots__ = ("inputs", "output", "backward_fn", "op")

    def __init__(self, op, inputs, output, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of executed ops; inputs always precede their users."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _check_finite(op, arr):
    # min/max propagate NaN and catch +/-inf without a bool temporary
    if FINITE_CHECKS and arr.size and not (
        np.isfinite(arr.min()) and np.isfinite(arr.max())
    ):
        raise NumericError(f"non-finite values produced by op '{op}'")


def _make_output(op, data, inputs, backward_fn):
    _check_finite(op, data)
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires)
    tape = _active_tape()
    if tape is not None and requires:
        tape.nodes.append(Node(op, list(inputs), out, backward_fn))
    return out


def _same_dtype(*tensors):
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise ConfigurationError("mixed tensor dtypes in one op")
    return dt


# ---------------------------------------------------------------------------
# convolution


def conv2d(x, weight, bias=None, groups=1, stride=1, padding=0):
    """Direct 2-D cross-correlation. weight is (C_out, C_in/groups, k, k)."""
    _same_dtype(x, weight)
    n, cin, h, w = x.shape
    cout, cing, kh, kw = weight.shape
    if kh != kw:
        raise ConfigurationError("only square kernels are supported")
    k = kh
    if cin % groups != 0 or cout % groups != 0:
        raise ConfigurationError("channels not divisible by groups")
    if cing != cin // groups:
        raise ConfigurationError(
            f"weight expects {cing * groups} input channels, input has {cin}"
        )
    if bias is not None and bias.shape != (1, cout, 1, 1):
        raise ConfigurationError("bias must have shape (1, C_out, 1, 1)")
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ConfigurationError("kernel larger than padded input")

    if k == 1 and groups == 1 and h == 1 and w == 1:
        # per-token pointwise transform: one big GEMM over the batch axis
        w2d = weight.data.reshape(cout, cin)
        xm = x.data.reshape(n, cin)
        out = xm @ w2d.T
        if bias is not None:
            out = out + bias.data.reshape(1, cout)
        out = out.reshape(n, cout, 1, 1)

        def backward_token(grad):
            g2 = grad.reshape(n, cout)
            dx = (g2 @ w2d).reshape(n, cin, 1, 1)
            dw = (g2.T @ xm).reshape(weight.shape)
            grads = [dx, dw]
            if bias is not None:
                grads.append(g2.sum(axis=0).reshape(1, cout, 1, 1))
            return grads

        inputs = [x, weight] if bias is None else [x, weight, bias]
        return _make_output("conv2d", out, inputs, backward_token)

    if k == 1 and stride == 1 and padding == 0:
        cols = x.data.reshape(n, cin, h * w)
        hp = wp = None
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        hp, wp = xp.shape[2], xp.shape[3]
        cols = im2col(xp, k, stride, ho, wo)
    f = (cin // groups) * k * k
    cols_g = cols.reshape(n, groups, f, ho * wo)
    w_g = weight.data.reshape(groups, cout // groups, f)
    out = np.matmul(w_g[None], cols_g)  # (n, g, cout/g, L)
    out = out.reshape(n, cout, ho, wo)
    if bias is not None:
        out = out + bias.data

    def backward_fn(grad):
        g_g = grad.reshape(n, groups, cout // groups, ho * wo)
        dw = np.matmul(g_g, np.swapaxes(cols_g, 2, 3)).sum(axis=0).reshape(weight.shape)
        dcols = np.matmul(np.swapaxes(w_g, 1, 2)[None], g_g)  # (n, g, f, L)
        dcols = dcols.reshape(n, cin * k * k, ho * wo)
        if k == 1 and stride == 1 and padding == 0:
            dx = dcols.reshape(n, cin, h, w)
        else:
            dxp = col2im(dcols, k, stride, hp, wp, ho, wo)
            if padding > 0:
                dx = dxp[:, :, padding:-padding, padding:-padding]
            else:
                dx = dxp
        grads = [dx, dw]
        if bias is not None:
            grads.append(grad.sum(axis=(0, 2, 3)).reshape(1, cout, 1, 1))
        return grads

    inputs = [x, weight] if bias is None else [x, weight, bias]
    return _make_output("conv2d", out, inputs, backward_fn)


# ---------------------------------------------------------------------------
# pooling


def pool(x, kind):
    n, c, h, w = x.shape
    if kind == "max2x2":
        if h % 2 or w % 2:
            raise ConfigurationError("max2x2 requires even spatial dims")
        hh, ww = h // 2, w // 2
        xr = x.data.reshape(n, c, hh, 2, ww, 2).transpose(0, 1, 2, 4, 3, 5)
        xr = xr.reshape(n, c, hh, ww, 4)
        idx = xr.argmax(axis=-1)
        out = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]

        def backward_fn(grad):
            z = np.zeros((n, c, hh, ww, 4), dtype=grad.dtype)
            np.put_along_axis(z, idx[..., None], grad[..., None], axis=-1)
            z = z.reshape(n, c, hh, ww, 2, 2).transpose(0, 1, 2, 4, 3, 5)
            return [z.reshape(n, c, h, w)]

        return _make_output("max2x2", out, [x], backward_fn)

    if kind == "global_avg":
        out = x.data.mean(axis=(2, 3), keepdims=True)

        def backward_fn(grad):
            return [np.broadcast_to(grad / (h * w), x.shape).astype(grad.dtype)]

        return _make_output("global_avg", out, [x], backward_fn)

    if kind == "global_max":
        flat = x.data.reshape(n, c, h * w)
        idx = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, idx[..., None], axis=-1).reshape(n, c, 1, 1)

        def backward_fn(grad):
            z = np.zeros((n, c, h * w), dtype=grad.dtype)
            np.put_along_axis(z, idx[..., None], grad.reshape(n, c, 1), axis=-1)
            return [z.reshape(n, c, h, w)]

        return _make_output("global_max", out, [x], backward_fn)

    if kind == "channel_mean":
        out = x.data.mean(axis=1, keepdims=True)

        def backward_fn(grad):
            return [np.broadcast_to(grad / c, x.shape).astype(grad.dtype)]

        return _make_output("channel_mean", out, [x], backward_fn)

    if kind == "channel_max":
        idx = x.data.argmax(axis=1)
        out = np.take_along_axis(x.data, idx[:, None], axis=1)

        def backward_fn(grad):
            z = np.zeros_like(x.data)
            np.put_along_axis(z, idx[:, None], grad, axis=1)
            return [z]

        return _make_output("channel_max", out, [x], backward_fn)

    raise ConfigurationError(f"unknown pool kind '{kind}'")


# ---------------------------------------------------------------------------
# resizing

_BILINEAR_CACHE = {}


def _bilinear_matrix(n_in, dtype):
    key = (n_in, np.dtype(dtype).str)
    m = _BILINEAR_CACHE.get(key)
    if m is None:
        m = np.zeros((2 * n_in, n_in), dtype=dtype)
        for i_out in range(2 * n_in):
            src = (i_out + 0.5) / 2.0 - 0.5
            src = min(max(src, 0.0), n_in - 1.0)
            i0 = int(np.floor(src))
            i1 = min(i0 + 1, n_in - 1)
            frac = src - i0
            m[i_out, i0] += 1.0 - frac
            m[i_out, i1] += frac
        _BILINEAR_CACHE[key] = m
    return m


def resize2x(x, mode="bilinear"):
    n, c, h, w = x.shape
    if mode == "nearest":
        out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

        def backward_fn(grad):
            return [grad.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))]

        return _make_output("resize2x_nearest", out, [x], backward_fn)

    if mode == "bilinear":
        mh = _bilinear_matrix(h, x.data.dtype)
        mw = _bilinear_matrix(w, x.data.dtype)
        out = np.matmul(np.matmul(mh, x.data), mw.T)

        def backward_fn(grad):
            return [np.matmul(np.matmul(mh.T, grad), mw)]

        return _make_output("resize2x_bilinear", out, [x], backward_fn)

    raise ConfigurationError(f"unknown resize mode '{mode}'")


# ---------------------------------------------------------------------------
# elementwise ops


def relu(x):
    mask = x.data > 0
    # maximum propagates NaN so a poisoned input trips the finite check
    out = np.maximum(x.data, 0)

    def backward_fn(grad):
        return [np.where(mask, grad, 0)]

    return _make_output("relu", out, [x], backward_fn)


def sigmoid(x):
    s = 1.0 / (1.0 + np.exp(-x.data))

    def backward_fn(grad):
        return [grad * s * (1.0 - s)]

    return _make_output("sigmoid", s, [x], backward_fn)


def silu(x):
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = x.data * s

    def backward_fn(grad):
        return [grad * (s + x.data * s * (1.0 - s))]

    return _make_output("silu", out, [x], backward_fn)


def _check_broadcast(a, b):
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ConfigurationError(f"shapes {a.shape} and {b.shape} not broadcastable")


def _unbroadcast(grad, shape):
    axes = tuple(i for i in range(4) if shape[i] == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b):
    _same_dtype(a, b)
    _check_broadcast(a, b)
    out = a.data + b.data

    def backward_fn(grad):
        return [_unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)]

    return _make_output("add", out, [a, b], backward_fn)


def mul(a, b):
    _same_dtype(a, b)
    _check_broadcast(a, b)
    out = a.data * b.data

    def backward_fn(grad):
        return [
            _unbroadcast(grad * b.data, a.shape),
            _unbroadcast(grad * a.data, b.shape),
        ]

    return _make_output("mul", out, [a, b], backward_fn)


def scale(x, factor):
    factor = float(factor)
    out = x.data * factor

    def backward_fn(grad):
        return [grad * factor]

    return _make_output("scale", out, [x], backward_fn)


# ---------------------------------------------------------------------------
# softmax over channels


def softmax_channel(x):
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def backward_fn(grad):
        dot = (grad * p).sum(axis=1, keepdims=True)
        return [p * (grad - dot)]

    return _make_output("softmax_channel", p, [x], backward_fn)


# ---------------------------------------------------------------------------
# batch normalization


def batchnorm(x, gamma, beta, running_mean, running_var, training,
              momentum=0.1, eps=1e-5):
    """Per-channel batch normalization with running-statistics tracking.

    gamma/beta are (1,C,1,1) tensors; running_mean/var are plain (C,) arrays
    updated in place in training mode (biased batch variance normalizes, the
    unbiased estimate feeds the running average).
    """
    _same_dtype(x, gamma, beta)
    n, c, h, w = x.shape
    if gamma.shape != (1, c, 1, 1) or beta.shape != (1, c, 1, 1):
        raise ConfigurationError("batchnorm affine params must be (1,C,1,1)")
    m = n * h * w
    if training:
        mean = x.data.mean(axis=(0, 2, 3), keepdims=True)
        var = x.data.var(axis=(0, 2, 3), keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mean) * inv
        unbiased = var.reshape(c) * (m / max(m - 1, 1))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean.reshape(c)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased

        def backward_fn(grad):
            dgamma = (grad * xhat).sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
            dbeta = grad.sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
            dxhat = grad * gamma.data
            sum_dxhat = dxhat.sum(axis=(0, 2, 3), keepdims=True)
            sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            dx = inv / m * (m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
            return [dx, dgamma, dbeta]

    else:
        inv = 1.0 / np.sqrt(running_var.reshape(1, c, 1, 1) + eps)
        mean = running_mean.reshape(1, c, 1, 1)
        xhat = (x.data - mean) * inv.astype(x.data.dtype)

        def backward_fn(grad):
            dgamma = (grad * xhat).sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
            dbeta = grad.sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
            dx = grad * gamma.data * inv
            return [dx, dgamma, dbeta]

    out = gamma.data * xhat + beta.data
    return _make_output("batchnorm", out.astype(x.data.dtype), [x, gamma, beta], backward_fn)


# ---------------------------------------------------------------------------
# concatenation / slicing / reshaping


def concat_channels(a, b):
    _same_dtype(a, b)
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ConfigurationError(f"cannot concat {a.shape} with {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def backward_fn(grad):
        return [grad[:, :ca], grad[:, ca:]]

    return _make_output("concat_channels", out, [a, b], backward_fn)


def slice_channels(x, start, stop):
    if not (0 <= start <= stop <= x.shape[1]):
        raise ConfigurationError("channel slice out of range")
    out = x.data[:, start:stop].copy()

    def backward_fn(grad):
        z = np.zeros_like(x.data)
        z[:, start:stop] = grad
        return [z]

    return _make_output("slice_channels", out, [x], backward_fn)


def reshape(x, shape):
    if int(np.prod(shape)) != x.data.size or len(shape) != 4:
        raise ConfigurationError(f"cannot reshape {x.shape} to {shape}")
    out = x.data.reshape(shape)

    def backward_fn(grad):
        return [grad.reshape(x.shape)]

    return _make_output("reshape", out, [x], backward_fn)


def patch(x):
    """Flatten a feature map into per-pixel tokens: (N,C,H,W) -> (N*H*W, C, 1, 1)."""
    n, c, h, w = x.shape
    out = x.data.transpose(0, 2, 3, 1).reshape(n * h * w, c, 1, 1)

    def backward_fn(grad):
        return [grad.reshape(n, h, w, c).transpose(0, 3, 1, 2)]

    return _make_output("patch", np.ascontiguousarray(out), [x], backward_fn)


def unpatch(tokens, map_shape):
    """Inverse of `patch`: (N*H*W, C, 1, 1) -> (N, C, H, W)."""
    n, c, h, w = map_shape
    if tokens.shape != (n * h * w, c, 1, 1):
        raise ConfigurationError(f"token shape {tokens.shape} does not match map {map_shape}")
    out = tokens.data.reshape(n, h, w, c).transpose(0, 3, 1, 2)

    def backward_fn(grad):
        return [np.ascontiguousarray(grad.transpose(0, 2, 3, 1).reshape(n * h * w, c, 1, 1))]

    return _make_output("unpatch", np.ascontiguousarray(out), [tokens], backward_fn)


# ---------------------------------------------------------------------------
# reductions


def tsum(x):
    out = np.full((1, 1, 1, 1), x.data.sum(), dtype=x.data.dtype)

    def backward_fn(grad):
        return [np.broadcast_to(grad, x.shape).astype(grad.dtype)]

    return _make_output("sum", out, [x], backward_fn)


def tmean(x):
    m = x.data.size
    out = np.full((1, 1, 1, 1), x.data.mean(), dtype=x.data.dtype)

    def backward_fn(grad):
        return [np.broadcast_to(grad / m, x.shape).astype(grad.dtype)]

    return _make_output("mean", out, [x], backward_fn)


# ---------------------------------------------------------------------------
# dropout (inverted)


def dropout(x, rate, rng, training):
    if not training or rate <= 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep).astype(x.data.dtype) / keep
    out = x.data * mask

    def backward_fn(grad):
        return [grad * mask]

    return _make_output("dropout", out, [x], backward_fn)


# ---------------------------------------------------------------------------
# channel-wise spline activation (TiKAN spline path)

_SQUASH_EPS = 1e-8


def spline_act(x, control, grid_size, order):
    """Per-channel B-spline evaluated on min-max squashed inputs.

    Each pixel's channel vector is squashed to [0,1] (per-token min-max),
    then channel c is mapped through the spline with control points
    control[0, c, 0, :]. control has shape (1, C, 1, grid_size + order).
    """
    _same_dtype(x, control)
    n, c, h, w = x.shape
    nb = grid_size + order
    if control.shape != (1, c, 1, nb):
        raise ConfigurationError(
            f"control points must be (1,{c},1,{nb}), got {control.shape}"
        )
    mn = x.data.min(axis=1, keepdims=True)
    mx = x.data.max(axis=1, keepdims=True)
    denom = (mx - mn) + np.asarray(_SQUASH_EPS, dtype=x.data.dtype)
    u = np.clip((x.data - mn) / denom, 0.0, 1.0)
    knots = make_knots(grid_size, order, dtype=x.data.dtype)
    basis, dbasis = bspline_design(u.ravel(), grid_size, order, knots)
    basis = basis.reshape(n, c, h * w, nb)
    dbasis = dbasis.reshape(n, c, h * w, nb)
    ctrl = control.data.reshape(c, nb)
    out = np.einsum("ncpb,cb->ncp", basis, ctrl).reshape(n, c, h, w)
    am = x.data.argmin(axis=1)  # (n, h, w), first occurrence
    aM = x.data.argmax(axis=1)

    def backward_fn(grad):
        g3 = grad.reshape(n, c, h * w)
        dctrl = np.einsum("ncp,ncpb->cb", g3, basis).reshape(control.shape)
        sprime = np.einsum("ncpb,cb->ncp", dbasis, ctrl).reshape(n, c, h, w)
        q = grad * sprime / denom
        dx = q.copy()
        qsum = q.sum(axis=1)
        qu = (q * u).sum(axis=1)
        # min/max coupling of the per-token squash
        corr_min = (-qsum + qu)[:, None]
        corr_max = (-qu)[:, None]
        np.put_along_axis(
            dx, am[:, None], np.take_along_axis(dx, am[:, None], axis=1) + corr_min, axis=1
        )
        np.put_along_axis(
            dx, aM[:, None], np.take_along_axis(dx, aM[:, None], axis=1) + corr_max, axis=1
        )
        return [dx, dctrl]

    return _make_output("spline_act", out, [x, control], backward_fn)


# ---------------------------------------------------------------------------
# weighted softmax cross-entropy (fused)


def weighted_ce(logits, target, weights):
    """Mean over pixels of w[y] * (-log softmax(logits)[y]).

    target is an integer (N,H,W) array; weights a (K,) array.
    """
    n, k, h, w = logits.shape
    target = np.asarray(target)
    if target.shape != (n, h, w):
        raise ConfigurationError(f"target shape {target.shape} != {(n, h, w)}")
    if target.min() < 0 or target.max() >= k:
        raise DataError("target labels out of range [0, K)")
    weights = np.asarray(weights, dtype=logits.data.dtype)
    if weights.shape != (k,):
        raise ConfigurationError(f"weights must have shape ({k},)")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    m = n * h * w
    wy = weights[target]  # (n, h, w)
    picked = np.take_along_axis(logp, target[:, None], axis=1)[:, 0]
    loss = -(wy * picked).sum() / m
    out = np.full((1, 1, 1, 1), loss, dtype=logits.data.dtype)

    def backward_fn(grad):
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, target[:, None], 1.0, axis=1)
        g = float(grad.reshape(())) if grad.size == 1 else float(grad.sum())
        dlogits = g * (wy[:, None] / m) * (p - onehot)
        return [dlogits]

    return _make_output("weighted_ce", out, [logits], backward_fn)


# ---------------------------------------------------------------------------
# backward pass and gradient checking


def backward(tape, loss):
    """Replay the tape in reverse; returns {leaf tensor: gradient array}."""
    if loss.data.size != 1:
        raise ConfigurationError("loss must be scalar")
    grads = {id(loss): np.ones_like(loss.data)}
    produced = {id(node.output) for node in tape.nodes}
    result = {}
    for node in reversed(tape.nodes):
        gout = grads.pop(id(node.output), None)
        if gout is None:
            continue
        gins = node.backward_fn(gout)
        for t, g in zip(node.inputs, gins):
            if g is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
            if key not in produced:
                result[t] = grads[key]
    return result


def gradcheck(closure, shapes, seed, eps=1e-5, floor=1e-3):
    """Max relative error between analytic and central-difference gradients.

    closure maps a list of float64 tensors to a scalar tensor. All inputs
    are perturbed coordinate by coordinate. The error denominator is
    floored, so coordinates whose gradients fall below `floor` are compared
    absolutely at floor-scale; central differences on such coordinates are
    dominated by cancellation noise, not by gradient defects.
    """
    rng = np.random.default_rng(seed)
    inputs = [
        Tensor(rng.standard_normal(s).astype(np.float64), requires_grad=True)
        for s in shapes
    ]
    with Tape() as tape:
        loss = closure(*inputs)
    analytic = backward(tape, loss)
    max_err = 0.0
    for t in inputs:
        a = analytic.get(t)
        if a is None:
            a = np.zeros_like(t.data)
        flat = t.data.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(closure(*inputs).data.reshape(()))
            flat[i] = orig - eps
            fm = float(closure(*inputs).data.reshape(()))
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            ana = a.ravel()[i]
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            if err > max_err:
                max_err = err
    return max_err
