"""Self-check suites for the CLI and test harness.

Each suite returns (ok, details) and is deterministic. The end-to-end
gradient check builds a miniature float64 model and compares analytic
gradients against central differences for the input and a sample of
coordinates from every parameter.
"""

import numpy as np

from . import tensor as F
from .metrics import ConfusionMatrix, accumulate, report, scores
from .model import ModelConfig, build
from .spline import bspline_basis, spline_eval
from .tensor import Tape, Tensor, backward, gradcheck
from .tikan import TiKANConfig, gate
from .training import AdamW, TrainConfig, lr_at, total_loss


def suite_grad(threshold=1e-4):
    """Gradient checks for every differentiable op family."""
    checks = {
        "conv2d": (lambda x, w: F.tsum(F.conv2d(x, w, padding=1)),
                   [(2, 3, 5, 5), (4, 3, 3, 3)]),
        "grouped_conv": (lambda x, w: F.tsum(F.conv2d(x, w, groups=4, padding=1)),
                         [(2, 4, 4, 4), (4, 1, 3, 3)]),
        "max_pool": (lambda x: F.tsum(F.pool(x, "max2x2")), [(2, 3, 4, 4)]),
        "bilinear_up": (lambda x: F.tsum(F.resize2x(x, "bilinear")), [(1, 2, 3, 3)]),
        "attention_pools": (
            lambda x: F.tsum(F.add(F.pool(x, "channel_mean"), F.pool(x, "channel_max"))),
            [(2, 4, 3, 3)],
        ),
        "softmax": (lambda x: F.tsum(F.mul(F.softmax_channel(x), F.sigmoid(x))),
                    [(2, 3, 2, 2)]),
        "spline_act": (
            lambda x, c: F.tsum(F.spline_act(x, c, 5, 3)),
            [(2, 4, 3, 3), (1, 4, 1, 8)],
        ),
        # sums (and per-channel quadratics) of a normalized output are
        # constant in x, so probe with a fixed position-dependent tensor
        "batchnorm": (
            lambda x, g, b: F.tsum(F.mul(
                F.batchnorm(x, g, b, np.zeros(3), np.ones(3), training=True),
                Tensor(np.random.default_rng(99).uniform(0.2, 1.0, (2, 3, 3, 3))))),
            [(2, 3, 3, 3), (1, 3, 1, 1), (1, 3, 1, 1)],
        ),
    }
    worst = {}
    for name, (fn, shapes) in checks.items():
        worst[name] = gradcheck(fn, shapes, seed=0)
    rng = np.random.default_rng(1)
    target = rng.integers(0, 3, (2, 2, 2))
    w = np.asarray([1.0, 2.0, 0.5])
    worst["weighted_ce"] = gradcheck(
        lambda x: F.weighted_ce(x, target, w), [(2, 3, 2, 2)], seed=1
    )
    ok = all(v < threshold for v in worst.values())
    return ok, worst


def suite_spline():
    """Partition of unity, locality, and finite-difference derivative."""
    details = {}
    grid_size, order = 5, 3
    xs = np.linspace(0.0, 1.0, 37)
    sums = [bspline_basis(x, grid_size, order).sum() for x in xs]
    details["partition_of_unity"] = float(max(abs(s - 1.0) for s in sums))
    rng = np.random.default_rng(0)
    ctrl = rng.uniform(-1.0, 1.0, grid_size + order)
    eps = 1e-6
    err = 0.0
    from .kernels import bspline_design
    for x in np.linspace(0.05, 0.95, 19):
        fd = (spline_eval(x + eps, ctrl, grid_size, order)
              - spline_eval(x - eps, ctrl, grid_size, order)) / (2 * eps)
        _, d = bspline_design(np.asarray([x]), grid_size, order)
        err = max(err, abs(float(d[0] @ ctrl) - fd))
    details["derivative_fd"] = err
    ok = details["partition_of_unity"] < 1e-10 and err < 1e-5
    return ok, details


def suite_gate():
    """Gate truth table at the default thresholds."""
    cfg = TiKANConfig()
    cases = [
        ((16, 32, 32), True),    # just enough channels, small map
        ((15, 32, 32), False),   # one channel short
        ((16, 32, 33), False),   # one pixel over the area cap
        ((512, 1, 1), True),
        ((1, 1, 1), False),
        ((256, 16, 64), True),   # exactly at the area cap
    ]
    results = {f"{c}x{h}x{w}": gate(c, h, w, cfg) == expect for (c, h, w), expect in cases}
    return all(results.values()), results


def suite_metrics():
    """Invariants plus a worked 2-class example."""
    details = {}
    cm = ConfusionMatrix(3)
    accumulate(cm, np.arange(3).reshape(1, 3), np.arange(3).reshape(1, 3))
    rep = report(cm)
    details["perfect_all_one"] = all(abs(v - 1.0) < 1e-12 for v in rep.values())
    # gt: 6 of class 0, 2 of class 1; prediction confuses one each way
    gt = np.asarray([0, 0, 0, 0, 0, 0, 1, 1])
    pr = np.asarray([0, 0, 0, 0, 0, 1, 0, 1])
    cm = ConfusionMatrix(2)
    accumulate(cm, pr, gt)
    s = scores(cm)
    details["pixel_acc"] = abs(s["pixel_acc"] - 0.75) < 1e-12
    details["iou_cls1"] = abs(s["iou"][1] - 1.0 / 3.0) < 1e-12
    details["bal_acc"] = abs(s["bal_acc"] - (5.0 / 6.0 + 0.5) / 2.0) < 1e-12
    cm = ConfusionMatrix(2)
    accumulate(cm, np.zeros(4, int), np.asarray([0, 0, 0, 1]))
    details["constant_pred_mcc_zero"] = float(scores(cm)["mcc"][1]) == 0.0
    return all(bool(v) for v in details.values()), details


def suite_schedule():
    """Learning-rate endpoints and one hand-checked optimizer step."""
    cfg = TrainConfig()
    details = {
        "lr_start": abs(lr_at(0, cfg) - cfg.lr_min) < 1e-15,
        "lr_warm_end": abs(lr_at(5, cfg) - cfg.lr_max) < 1e-15,
        "lr_mid_cycle": abs(lr_at(17.5, cfg) - 5.05e-5) < 1e-12,
        "lr_cycle_end": abs(lr_at(30, cfg) - cfg.lr_min) < 1e-15,
    }
    p = Tensor(np.ones((1, 1, 1, 1)), requires_grad=True)
    opt = AdamW({"p": p}, TrainConfig(weight_decay=0.0))
    opt.step({"p": np.ones((1, 1, 1, 1))}, 0.1)
    details["adamw_first_step"] = abs(float(p.data.reshape(())) - 0.9) < 1e-6
    return all(details.values()), details


SUITES = {
    "grad": suite_grad,
    "spline": suite_spline,
    "gate": suite_gate,
    "metrics": suite_metrics,
    "schedule": suite_schedule,
}


def miniature_model():
    """Tiny float64 model with the KAN path engaged, for gradient checking."""
    cfg = ModelConfig(
        num_classes=2, levels=2, widths=(4, 8), input_size=8, dtype="float64",
        tikan=TiKANConfig(gamma_c=4, dropout=0.0), supervision_weights=(),
    )
    return build(cfg, seed=0)


def e2e_gradcheck(max_param_coords=3, eps=1e-6, seed=0):
    """Max relative error of analytic vs numeric gradients through the full
    forward + loss, over the input and sampled parameter coordinates."""
    model = miniature_model()
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((1, 3, 8, 8)), requires_grad=True)
    target = rng.integers(0, 2, (1, 8, 8))
    weights = np.asarray([1.0, 2.0])
    tcfg = TrainConfig()

    def loss_value():
        out = model.forward(x, training=False)
        return total_loss(out, target, weights, 0, tcfg, betas=())

    with Tape() as tape:
        loss = loss_value()
    analytic = backward(tape, loss)

    def numeric_at(arr, i):
        orig = arr.ravel()[i]
        arr.ravel()[i] = orig + eps
        fp = float(loss_value().data.reshape(()))
        arr.ravel()[i] = orig - eps
        fm = float(loss_value().data.reshape(()))
        arr.ravel()[i] = orig
        return (fp - fm) / (2 * eps)

    max_err = 0.0
    ax = analytic.get(x, np.zeros_like(x.data))
    for i in range(x.data.size):
        num = numeric_at(x.data, i)
        ana = ax.ravel()[i]
        max_err = max(max_err, abs(ana - num) / max(abs(ana), abs(num), 1e-3))

    for name, p in model.named_parameters():
        ap = analytic.get(p, np.zeros_like(p.data))
        idx = rng.choice(p.data.size, size=min(max_param_coords, p.data.size), replace=False)
        for i in idx:
            num = numeric_at(p.data, int(i))
            ana = ap.ravel()[int(i)]
            # floored denominator: below the floor the central difference is
            # cancellation-noise limited, so compare absolutely at that scale
            max_err = max(max_err, abs(ana - num) / max(abs(ana), abs(num), 1e-3))
    return max_err
