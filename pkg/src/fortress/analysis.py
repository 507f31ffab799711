"""Model complexity accounting.

Counts parameters and forward FLOPs per top-level block, alongside a
"twin" column: the cost of the same architecture with every factorized
(depthwise + pointwise) pair replaced by the standard convolution it
approximates. Conv FLOPs use 2 * Ho * Wo * k^2 * (Cin/groups) * Cout per
output map; normalizations and activations are counted at 2 FLOPs per
element. Also provides a simple forward-latency benchmark.
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .blocks import ChannelAttention, DSConvUnit, Fusion, KANDoubleConv, PredictionHead, SpatialAttention
from .errors import ContractError
from .tensor import Tensor
from .tikan import rank_for


def reduction_factor(k, c_out):
    """Parameter ratio standard-conv / DS-conv in the large-Cin limit."""
    return (k * k * c_out) / (k * k + c_out)


@dataclass
class AnalysisReport:
    rows: list = field(default_factory=list)  # dicts: name/params/twin_params/flops/twin_flops
    total_params: int = 0
    total_stored: int = 0
    twin_params: int = 0
    total_flops: int = 0
    twin_flops: int = 0

    @property
    def twin_ratio(self):
        return self.twin_params / self.total_params if self.total_params else float("inf")

    def to_json(self):
        return json.dumps({
            "rows": self.rows,
            "total_params": self.total_params,
            "total_stored": self.total_stored,
            "twin_params": self.twin_params,
            "twin_ratio": self.twin_ratio,
            "total_flops": self.total_flops,
            "twin_flops": self.twin_flops,
        }, indent=1)

    def to_text(self):
        lines = [f"{'block':<14}{'params':>12}{'twin':>12}{'MFLOPs':>12}{'twin MFLOPs':>14}"]
        for r in self.rows:
            lines.append(
                f"{r['name']:<14}{r['params']:>12}{r['twin_params']:>12}"
                f"{r['flops'] / 1e6:>12.1f}{r['twin_flops'] / 1e6:>14.1f}"
            )
        lines.append("-" * 64)
        lines.append(
            f"{'total':<14}{self.total_params:>12}{self.twin_params:>12}"
            f"{self.total_flops / 1e6:>12.1f}{self.twin_flops / 1e6:>14.1f}"
        )
        lines.append(f"stored values (incl. buffers): {self.total_stored}")
        lines.append(f"twin parameter ratio: {self.twin_ratio:.2f}")
        lines.append(f"total GFLOPs: {self.total_flops / 1e9:.3f}"
                     f" (twin {self.twin_flops / 1e9:.3f})")
        return "\n".join(lines)


def _params_of(module):
    return sum(p.data.size for _, p in module.named_parameters())


def _conv_flops(s, k, cin, cout, groups=1):
    return 2 * s * s * k * k * (cin // groups) * cout


def _ds_unit_costs(unit, s):
    params = unit.param_count()
    twin_p = 9 * unit.cin * unit.cout + 2 * unit.cout
    flops = (_conv_flops(s, 3, unit.cin, unit.cin, groups=unit.cin)
             + _conv_flops(s, 1, unit.cin, unit.cout)
             + 2 * s * s * unit.cout   # batchnorm
             + 2 * s * s * unit.cout)  # relu
    twin_f = _conv_flops(s, 3, unit.cin, unit.cout) + 4 * s * s * unit.cout
    if params != sum(p.data.size for _, p in unit.named_parameters()):
        raise ContractError("DS unit parameter invariant violated")
    return params, twin_p, flops, twin_f


def _kan_costs(tikan, s):
    """TiKAN enhancement over an s x s map of `dim` channels."""
    kan = tikan.kan
    dim, r = kan.dim, kan.rank
    nb = kan.cfg.grid_size + kan.cfg.order
    t = s * s
    params = _params_of(tikan)
    flops = (2 * t * dim                               # silu
             + 2 * t * dim * r + 2 * t * r * dim       # base low rank
             + _conv_flops(s, 3, dim, dim, groups=dim)  # dw enhancement
             + 4 * t * dim * nb                        # spline design + eval
             + 2 * t * dim * r + 2 * t * r * dim       # spline low rank
             + 6 * t * dim)                            # scales, residual blend
    # twin replaces both low-rank pairs with full dim x dim transforms
    twin_p = params - 2 * (dim * r + r * dim) + 2 * dim * dim
    twin_f = flops - 2 * (2 * t * dim * r + 2 * t * r * dim) + 2 * (2 * t * dim * dim)
    return params, twin_p, flops, twin_f


def _double_conv_costs(block, s):
    p1, tp1, f1, tf1 = _ds_unit_costs(block.ds1, s)
    p2, tp2, f2, tf2 = _ds_unit_costs(block.ds2, s)
    params, twin_p = p1 + p2, tp1 + tp2
    flops = f1 + f2 + s * s * block.cout  # micro residual add
    twin_f = tf1 + tf2 + s * s * block.cout
    if block.proj is not None:
        params += block.proj.data.size
        twin_p += block.proj.data.size
        flops += _conv_flops(s, 1, block.cin, block.cout)
        twin_f += _conv_flops(s, 1, block.cin, block.cout)
    if block.tikan is not None:
        kp, ktp, kf, ktf = _kan_costs(block.tikan, s)
        params += kp
        twin_p += ktp
        flops += kf
        twin_f += ktf
    flops += s * s * block.cout  # outer residual add
    twin_f += s * s * block.cout
    return params, twin_p, flops, twin_f


def _spatial_att_costs(att, s):
    k = att.kernel
    params = _params_of(att)
    twin_p = k * k * 2 * 1 + 1  # one standard k x k conv, 2 -> 1, plus bias
    flops = (4 * s * s  # channel mean + max descriptors (2 each, C-normalized)
             + _conv_flops(s, k, 2, 2, groups=2)
             + _conv_flops(s, 1, 2, 1)
             + 2 * s * s   # sigmoid
             + s * s)      # apply (per channel cost folded into caller? keep map only)
    twin_f = 4 * s * s + _conv_flops(s, k, 2, 1) + 3 * s * s
    return params, twin_p, flops, twin_f


def _channel_att_costs(att, s):
    c, h = att.channels, att.hidden
    params = _params_of(att)
    flops = (2 * 2 * s * s * c        # global avg + max pools
             + 2 * (2 * c * h + 2 * h * c)  # shared MLP on both descriptors
             + 2 * c                  # sigmoid
             + s * s * c)             # apply
    return params, params, flops, flops


def _fusion_costs(fus, s):
    params = _params_of(fus)
    flops = _conv_flops(s, 1, 3 * fus.channels, fus.channels)
    return params, params, flops, flops


def _head_costs(head, s):
    c, k = head.channels, head.num_classes
    params = _params_of(head)
    twin_p = c * k + k
    flops = _conv_flops(s, 1, c, c, groups=c) + _conv_flops(s, 1, c, k) + s * s * k
    twin_f = _conv_flops(s, 1, c, k) + s * s * k
    return params, twin_p, flops, twin_f


def analyze(model, input_size=None):
    """Per-block parameter and FLOP report for one forward pass at
    input_size (defaults to the model's configured size), batch 1."""
    cfg = model.cfg
    size = cfg.input_size if input_size is None else input_size

    def level_size(level):
        return size >> (level - 1)

    report = AnalysisReport()

    def add_row(name, costs):
        p, tp, f, tf = costs
        report.rows.append({
            "name": name, "params": int(p), "twin_params": int(tp),
            "flops": int(f), "twin_flops": int(tf),
        })

    for lvl in range(1, cfg.levels + 1):
        block = getattr(model, f"enc{lvl}")
        add_row(f"enc{lvl}", _double_conv_costs(block, level_size(lvl)))
    for d in range(cfg.levels - 1, 0, -1):
        s = level_size(d)
        add_row(f"dec{d}", _double_conv_costs(getattr(model, f"dec{d}"), s))
        ca = _channel_att_costs(getattr(model, f"skip_ca{d}"), s)
        sa = _spatial_att_costs(getattr(model, f"skip_sa{d}"), s)
        fsa = _spatial_att_costs(getattr(model, f"fus_sa{d}"), s)
        fca = _channel_att_costs(getattr(model, f"fus_ca{d}"), s)
        add_row(f"att{d}", tuple(a + b + c_ + e for a, b, c_, e in zip(ca, sa, fsa, fca)))
        add_row(f"fusion{d}", _fusion_costs(getattr(model, f"fusion{d}"), s))
    for d in model.aux_levels:
        add_row(f"head_aux{d}", _head_costs(getattr(model, f"head_aux{d}"), level_size(d)))
    add_row("head_final", _head_costs(model.head_final, size))

    report.total_params = sum(r["params"] for r in report.rows)
    report.twin_params = sum(r["twin_params"] for r in report.rows)
    report.total_flops = sum(r["flops"] for r in report.rows)
    report.twin_flops = sum(r["twin_flops"] for r in report.rows)
    report.total_stored = sum(a.size for a in model.state_arrays().values())

    true_total = sum(p.data.size for _, p in model.named_parameters())
    if report.total_params != true_total:
        raise ContractError(
            f"analyzer row total {report.total_params} != model total {true_total}"
        )
    return report


def count_params(model):
    rep = analyze(model)
    return rep.total_params, rep.twin_params, rep.total_stored


def count_flops(model, input_size=None):
    rep = analyze(model, input_size)
    return rep.total_flops, rep.twin_flops


def bench_forward(model, input_size=None, repeats=5, warmup=3, seed=0):
    """Forward latency stats (seconds) at batch 1."""
    size = model.cfg.input_size if input_size is None else input_size
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((1, 3, size, size)).astype(model.cfg.np_dtype))
    for _ in range(warmup):
        model.forward(x, training=False)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        model.forward(x, training=False)
        times.append(time.perf_counter() - t0)
    times = np.asarray(times)
    return {
        "mean": float(times.mean()),
        "median": float(np.median(times)),
        "min": float(times.min()),
        "repeats": repeats,
    }
