"""Reusable architecture blocks: DS conv units, the double-conv block with
gated KAN enhancement, spatial/channel attention, branch fusion, and
prediction heads."""

import numpy as np

from .errors import ConfigurationError
from .module import Module
from .tensor import (
    Tensor,
    add,
    batchnorm,
    concat_channels,
    conv2d,
    mul,
    pool,
    relu,
    sigmoid,
)
from .tikan import TiKAN, gate


def _dw_init(rng, cin, k, dtype):
    std = np.sqrt(2.0 / (k * k * cin))
    return Tensor(rng.normal(0.0, std, (cin, 1, k, k)).astype(dtype), requires_grad=True)


def _pw_init(rng, cin, cout, dtype):
    std = np.sqrt(2.0 / (cin + cout))
    return Tensor(rng.normal(0.0, std, (cout, cin, 1, 1)).astype(dtype), requires_grad=True)


class BatchNorm(Module):
    def __init__(self, channels, dtype=np.float32, momentum=0.1, eps=1e-5):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones((1, channels, 1, 1), dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros((1, channels, 1, 1), dtype=dtype), requires_grad=True)
        self.add_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.add_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x, training):
        return batchnorm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training, self.momentum, self.eps,
        )


class DSConvUnit(Module):
    """Depthwise 3x3 -> pointwise 1x1 -> BN -> ReLU. No conv bias (BN covers it)."""

    def __init__(self, cin, cout, rng, dtype=np.float32):
        super().__init__()
        self.cin = cin
        self.cout = cout
        self.dw = _dw_init(rng, cin, 3, dtype)
        self.pw = _pw_init(rng, cin, cout, dtype)
        self.bn = BatchNorm(cout, dtype=dtype)

    def param_count(self):
        return 9 * self.cin + self.cin * self.cout + 2 * self.cout

    def forward(self, x, training):
        if x.shape[1] != self.cin:
            raise ConfigurationError(f"expected {self.cin} channels, got {x.shape[1]}")
        h = conv2d(x, self.dw, groups=self.cin, padding=1)
        h = conv2d(h, self.pw)
        return relu(self.bn.forward(h, training))


def ds_conv_forward(x, unit, training=False):
    return unit.forward(x, training)


class KANDoubleConv(Module):
    """Two DS conv units with a micro-residual, gated KAN enhancement, and
    an outer residual (1x1 projection when the channel count changes)."""

    def __init__(self, cin, cout, rng, tikan_cfg=None, dtype=np.float32):
        super().__init__()
        self.cin = cin
        self.cout = cout
        self.ds1 = DSConvUnit(cin, cout, rng, dtype)
        self.ds2 = DSConvUnit(cout, cout, rng, dtype)
        if cin != cout:
            self.proj = _pw_init(rng, cin, cout, dtype)
        else:
            self.proj = None
        if tikan_cfg is not None:
            self.tikan = TiKAN(cout, tikan_cfg, rng, dtype=dtype)
        else:
            self.tikan = None

    def forward(self, x, training=False, rng=None, gate_result=None):
        h1 = self.ds1.forward(x, training)
        h2 = self.ds2.forward(h1, training)
        micro = add(h1, h2)
        if gate_result is None:
            gate_result = self.tikan is not None and gate(
                micro.shape[1], micro.shape[2], micro.shape[3], self.tikan.cfg
            )
        if gate_result:
            if self.tikan is None:
                raise ConfigurationError("block carries no TiKAN parameters")
            out = self.tikan.apply(micro, training, rng)
        else:
            out = micro
        res = conv2d(x, self.proj) if self.proj is not None else x
        return add(res, out)


def kan_double_conv(x, params, gate_result, training=False, rng=None):
    return params.forward(x, training, rng, gate_result)


class SpatialAttention(Module):
    """sigmoid(DSconv_k([channel_mean(x); channel_max(x)])) applied to x."""

    def __init__(self, kernel, rng, dtype=np.float32):
        super().__init__()
        if kernel not in (3, 5, 7):
            raise ConfigurationError("spatial attention kernel must be 3, 5 or 7")
        self.kernel = kernel
        self.dw = _dw_init(rng, 2, kernel, dtype)
        self.pw = _pw_init(rng, 2, 1, dtype)
        self.bias = Tensor(np.zeros((1, 1, 1, 1), dtype=dtype), requires_grad=True)

    def attention_map(self, x):
        d = concat_channels(pool(x, "channel_mean"), pool(x, "channel_max"))
        h = conv2d(d, self.dw, groups=2, padding=self.kernel // 2)
        return sigmoid(conv2d(h, self.pw, bias=self.bias))

    def forward(self, x):
        return mul(x, self.attention_map(x))


def spatial_attention(x, params, k=None):
    if k is not None and k != params.kernel:
        raise ConfigurationError(f"params built for kernel {params.kernel}, got {k}")
    return params.forward(x)


class ChannelAttention(Module):
    """Shared bottleneck MLP over global avg/max pooled descriptors."""

    def __init__(self, channels, rng, dtype=np.float32, reduction=16):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.channels = channels
        self.hidden = hidden
        self.w1 = _pw_init(rng, channels, hidden, dtype)
        self.b1 = Tensor(np.zeros((1, hidden, 1, 1), dtype=dtype), requires_grad=True)
        self.w2 = _pw_init(rng, hidden, channels, dtype)
        self.b2 = Tensor(np.zeros((1, channels, 1, 1), dtype=dtype), requires_grad=True)

    def _mlp(self, v):
        return conv2d(relu(conv2d(v, self.w1, bias=self.b1)), self.w2, bias=self.b2)

    def channel_weights(self, x):
        return sigmoid(add(self._mlp(pool(x, "global_avg")), self._mlp(pool(x, "global_max"))))

    def forward(self, x):
        return mul(x, self.channel_weights(x))


def channel_attention(x, params):
    return params.forward(x)


class Fusion(Module):
    """Learnable 1x1 fusion of three same-shaped branches."""

    def __init__(self, channels, rng, dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.weight = _pw_init(rng, 3 * channels, channels, dtype)

    def forward(self, spatial_out, channel_out, kan_out):
        if not (spatial_out.shape == channel_out.shape == kan_out.shape):
            raise ConfigurationError("fusion branches must share one shape")
        cat = concat_channels(concat_channels(spatial_out, channel_out), kan_out)
        return conv2d(cat, self.weight)


def fuse_branches(spatial_out, channel_out, kan_out, params):
    return params.forward(spatial_out, channel_out, kan_out)


class PredictionHead(Module):
    """Depthwise-separable 1x1 head producing class logits (bias on pointwise)."""

    def __init__(self, channels, num_classes, rng, dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.num_classes = num_classes
        self.dw = _dw_init(rng, channels, 1, dtype)
        self.pw = _pw_init(rng, channels, num_classes, dtype)
        self.bias = Tensor(np.zeros((1, num_classes, 1, 1), dtype=dtype), requires_grad=True)

    def forward(self, x):
        h = conv2d(x, self.dw, groups=self.channels)
        return conv2d(h, self.pw, bias=self.bias)


def prediction_head(x, params):
    return params.forward(x)
