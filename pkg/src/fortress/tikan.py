"""Adaptive Kolmogorov-Arnold enhancement path.

A low-rank KAN layer transforms per-pixel tokens through a silu base path
and a per-channel B-spline path (fed through a depthwise 3x3 enhancement
conv), and the enhanced map is blended back residually with a learnable
scale. The whole path is active only when the activation gate fires.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError
from .module import Module
from .tensor import (
    Tensor,
    add,
    conv2d,
    dropout,
    mul,
    patch,
    scale,
    silu,
    spline_act,
    unpatch,
)


@dataclass
class TiKANConfig:
    gamma_c: int = 16          # minimum channels for the gate
    gamma_s: int = 1024        # maximum H*W for the gate
    grid_size: int = 5
    order: int = 3
    rank_cap: int = 64         # low-rank width = min(D/4, rank_cap)
    alpha_init: float = 0.1
    dropout: float = 0.1
    blend: bool = False        # convex blend instead of the additive residual

    def __post_init__(self):
        if self.grid_size < 1 or self.order < 1:
            raise ConfigurationError("grid_size and order must be >= 1")
        if self.gamma_c < 1:
            raise ConfigurationError("gamma_c must be >= 1")
        if self.rank_cap < 1:
            raise ConfigurationError("rank_cap must be >= 1")


def gate(channels, height, width, cfg):
    """True iff the KAN path is worth its cost at this feature size."""
    return channels >= cfg.gamma_c and height * width <= cfg.gamma_s


def rank_for(dim, cfg):
    return max(1, min(dim // 4, cfg.rank_cap))


class KANLinear(Module):
    """Low-rank token transform: s_base*(A@B)@silu(x) + s_spline*(As@Bs)@phi(dw(x))."""

    def __init__(self, dim, cfg, rng, dim_out=None, dtype=np.float32):
        super().__init__()
        dim_out = dim if dim_out is None else dim_out
        self.dim = dim
        self.dim_out = dim_out
        self.cfg = cfg
        r = rank_for(dim, cfg)
        self.rank = r
        nb = cfg.grid_size + cfg.order

        def normal(std, shape):
            return Tensor(rng.normal(0.0, std, shape).astype(dtype), requires_grad=True)

        self.base_a = normal(np.sqrt(2.0 / (r + dim_out)), (dim_out, r, 1, 1))
        self.base_b = normal(np.sqrt(2.0 / (dim + r)), (r, dim, 1, 1))
        self.spline_a = normal(np.sqrt(2.0 / (r + dim_out)), (dim_out, r, 1, 1))
        self.spline_b = normal(np.sqrt(2.0 / (dim + r)), (r, dim, 1, 1))
        self.dw_enhance = normal(np.sqrt(2.0 / (9 * dim)), (dim, 1, 3, 3))
        self.control = Tensor(
            rng.uniform(-0.1, 0.1, (1, dim, 1, nb)).astype(dtype), requires_grad=True
        )
        self.s_base = Tensor(np.ones((1, 1, 1, 1), dtype=dtype), requires_grad=True)
        self.s_spline = Tensor(np.ones((1, 1, 1, 1), dtype=dtype), requires_grad=True)

    def forward(self, tokens, map_shape=None):
        if tokens.shape[1] != self.dim or tokens.shape[2:] != (1, 1):
            raise ConfigurationError(
                f"tokens must be (T,{self.dim},1,1), got {tokens.shape}"
            )
        base = conv2d(conv2d(silu(tokens), self.base_b), self.base_a)
        base = mul(base, self.s_base)
        if map_shape is not None:
            fm = unpatch(tokens, map_shape)
            fm = conv2d(fm, self.dw_enhance, groups=self.dim, padding=1)
            z = patch(fm)
        else:
            z = conv2d(tokens, self.dw_enhance, groups=self.dim, padding=1)
        sp = spline_act(z, self.control, self.cfg.grid_size, self.cfg.order)
        sp = mul(conv2d(conv2d(sp, self.spline_b), self.spline_a), self.s_spline)
        return add(base, sp)


def kan_linear(tokens, params, map_shape=None):
    return params.forward(tokens, map_shape)


class TiKAN(Module):
    """Gated residual KAN enhancement of a feature map."""

    def __init__(self, channels, cfg, rng, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.channels = channels
        self.kan = KANLinear(channels, cfg, rng, dtype=dtype)
        self.alpha = Tensor(
            np.full((1, 1, 1, 1), cfg.alpha_init, dtype=dtype), requires_grad=True
        )

    def apply(self, featmap, training=False, rng=None):
        return tikan_apply(featmap, self, self.cfg, training, rng)


def tikan_apply(featmap, params, cfg, training=False, rng=None):
    """featmap + alpha * tau(featmap); the caller must have checked the gate."""
    n, c, h, w = featmap.shape
    if not gate(c, h, w, cfg):
        raise ContractError(f"gate is false for shape ({c},{h},{w})")
    tokens = patch(featmap)
    tau = unpatch(params.kan.forward(tokens, map_shape=featmap.shape), featmap.shape)
    if training and cfg.dropout > 0.0:
        if rng is None:
            raise ConfigurationError("training-mode tikan_apply needs an rng")
        tau = dropout(tau, cfg.dropout, rng, training)
    if cfg.blend:
        # alpha*tau + (1 - alpha)*featmap
        return add(mul(tau, params.alpha), add(featmap, mul(featmap, scale(params.alpha, -1.0))))
    return add(featmap, mul(tau, params.alpha))
