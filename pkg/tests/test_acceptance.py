"""Acceptance suite: eleven end-to-end criteria, one printed line each.

Each test records `criterion NN (<name>): PASS|FAIL` and then asserts, so a
red criterion is also a red test. The verdict lines are printed both here
(visible with -s and in failure reports) and in the terminal summary via the
conftest hook, where output capture cannot swallow them.
"""

import math
import time

import numpy as np
import pytest

from fortress import tensor as F
from fortress.analysis import analyze, reduction_factor
from fortress.blocks import ChannelAttention, KANDoubleConv, SpatialAttention
from fortress.dataio import SynthConfig, dli_inject, generate_sample, make_patch_bank
from fortress.metrics import ConfusionMatrix, accumulate, scores
from fortress.model import ModelConfig, build, load, save
from fortress.spline import bspline_basis, spline_eval
from fortress.tensor import Tensor, gradcheck
from fortress.tikan import KANLinear, TiKAN, TiKANConfig, gate, tikan_apply
from fortress.training import (
    TrainConfig,
    fit,
    lr_at,
    supervision_decay,
    total_loss,
)
from fortress.verify import e2e_gradcheck

from test_metrics import oracle_scores


VERDICTS = []


def _verdict(num, name, ok):
    line = f"criterion {num:2d} ({name}): {'PASS' if ok else 'FAIL'}"
    VERDICTS.append(line)
    print(line)
    return ok


def test_criterion_01_efficiency_arithmetic():
    t0 = time.perf_counter()
    rep = analyze(build(ModelConfig(), seed=0))
    elapsed = time.perf_counter() - t0
    checks = {
        "params_in_band": 1_700_000 <= rep.total_params <= 4_000_000,
        "flops_in_band": 0.6e9 <= rep.total_flops <= 2.0e9,
        "twin_ratio": rep.twin_ratio >= 3.0,
        "runtime": elapsed < 5.0,
    }
    ok = _verdict(1, "efficiency arithmetic", all(checks.values()))
    assert ok, {**checks, "params": rep.total_params, "flops": rep.total_flops,
                "ratio": rep.twin_ratio, "seconds": elapsed}


def test_criterion_02_reduction_factor_identity():
    model = build(ModelConfig(), seed=0)
    units = []
    for block in model.encoders + model.decoders:
        units.extend([block.ds1, block.ds2])
    assert units
    worst = 0.0
    for u in units:
        conv_actual = 9 * u.cin + u.cin * u.cout
        conv_twin = 9 * u.cin * u.cout
        worst = max(worst, abs(conv_twin / conv_actual
                               - reduction_factor(3, u.cout)))
    spot = abs(reduction_factor(3, 64) - 7.8904)
    ok = _verdict(2, "reduction-factor identity", worst < 1e-9 and spot < 1e-3)
    assert ok, {"worst_identity_gap": worst, "spot_gap": spot}


def test_criterion_03_gradient_correctness():
    t0 = time.perf_counter()
    errs = {}
    for seed in (0, 1, 2):
        for groups, cin, cout in [(1, 3, 4), (2, 4, 6), (4, 4, 4)]:
            errs[f"conv_g{groups}_s{seed}"] = gradcheck(
                lambda x, w: F.tsum(F.conv2d(x, w, groups=groups, padding=1)),
                [(2, cin, 4, 4), (cout, cin // groups, 3, 3)], seed=seed)

        probe = np.random.default_rng(100 + seed).uniform(0.2, 1.0, (2, 3, 3, 3))
        errs[f"bn_s{seed}"] = gradcheck(
            lambda x, g, b: F.tsum(F.mul(
                F.batchnorm(x, g, b, np.zeros(3), np.ones(3), training=True),
                Tensor(probe))),
            [(2, 3, 3, 3), (1, 3, 1, 1), (1, 3, 1, 1)], seed=seed)

        target = np.random.default_rng(seed).integers(0, 3, (2, 2, 2))
        w = np.random.default_rng(seed).uniform(0.5, 2.0, 3)
        errs[f"ce_s{seed}"] = gradcheck(
            lambda x: F.weighted_ce(x, target, w), [(2, 3, 2, 2)], seed=seed)

        sa = SpatialAttention(3, np.random.default_rng(seed), dtype=np.float64)

        def sa_closure(x, dw, pw, b):
            sa.dw, sa.pw, sa.bias = dw, pw, b
            return F.tsum(sa.forward(x))

        errs[f"sa_s{seed}"] = gradcheck(
            sa_closure, [(1, 3, 4, 4), (2, 1, 3, 3), (1, 2, 1, 1), (1, 1, 1, 1)],
            seed=seed)

        ca = ChannelAttention(4, np.random.default_rng(seed), dtype=np.float64,
                              reduction=2)

        def ca_closure(x, w1, b1, w2, b2):
            ca.w1, ca.b1, ca.w2, ca.b2 = w1, b1, w2, b2
            return F.tsum(ca.forward(x))

        errs[f"ca_s{seed}"] = gradcheck(
            ca_closure,
            [(2, 4, 3, 3), (2, 4, 1, 1), (1, 2, 1, 1), (4, 2, 1, 1), (1, 4, 1, 1)],
            seed=seed)

        kl = KANLinear(8, TiKANConfig(grid_size=4, order=2),
                       np.random.default_rng(seed), dtype=np.float64)

        def kl_closure(tokens, ctrl, ba, bb):
            kl.control, kl.base_a, kl.base_b = ctrl, ba, bb
            return F.tsum(kl.forward(tokens))

        errs[f"kan_s{seed}"] = gradcheck(
            kl_closure,
            [(6, 8, 1, 1), (1, 8, 1, 6), (8, kl.rank, 1, 1), (kl.rank, 8, 1, 1)],
            seed=seed, eps=1e-6)

    e2e = {f"e2e_s{seed}": e2e_gradcheck(seed=seed) for seed in (0, 1, 2)}
    elapsed = time.perf_counter() - t0
    unit_ok = all(e < 1e-4 for e in errs.values())
    e2e_ok = all(e < 1e-3 for e in e2e.values())
    ok = _verdict(3, "gradient correctness",
                  unit_ok and e2e_ok and elapsed < 120.0)
    assert ok, {"worst_unit": max(errs.values()), "worst_e2e": max(e2e.values()),
                "seconds": elapsed}


def test_criterion_04_spline_properties():
    rng = np.random.default_rng(0)
    xs = rng.uniform(0.0, 1.0, 1000)
    worst_pu = 0.0
    worst_const = 0.0
    for grid_size, order in [(5, 3), (2, 1), (8, 3)]:
        for x in xs:
            worst_pu = max(worst_pu,
                           abs(bspline_basis(x, grid_size, order).sum() - 1.0))
        ctrl = np.full(grid_size + order, 0.731)
        for x in xs[:200]:
            worst_const = max(
                worst_const,
                abs(spline_eval(x, ctrl, grid_size, order) - 0.731))
    ok = _verdict(4, "spline properties", worst_pu < 1e-6 and worst_const < 1e-9)
    assert ok, {"partition_of_unity": worst_pu, "constant": worst_const}


def test_criterion_05_gate_and_identity():
    cfg = TiKANConfig()
    truth = (gate(16, 32, 32, cfg) is True
             and gate(8, 8, 8, cfg) is False
             and gate(64, 64, 64, cfg) is False)

    block = KANDoubleConv(8, 8, np.random.default_rng(3),
                          tikan_cfg=TiKANConfig(gamma_c=4))
    x = Tensor(np.random.default_rng(4).standard_normal((1, 8, 64, 64))
               .astype(np.float32))
    gated_off = block.forward(x, gate_result=False)
    h1 = block.ds1.forward(x, False)
    h2 = block.ds2.forward(h1, False)
    ds_only = F.add(x, F.add(h1, h2))
    gate_identity = gated_off.data.tobytes() == ds_only.data.tobytes()

    acfg = TiKANConfig(alpha_init=0.0)
    tk = TiKAN(16, acfg, np.random.default_rng(1), dtype=np.float64)
    fm = Tensor(np.random.default_rng(2).standard_normal((2, 16, 4, 4)))
    alpha_identity = (tikan_apply(fm, tk, acfg, training=False).data.tobytes()
                      == fm.data.tobytes())

    ok = _verdict(5, "gate and identity contracts",
                  truth and gate_identity and alpha_identity)
    assert ok, {"truth_table": truth, "gate_identity": gate_identity,
                "alpha_identity": alpha_identity}


def test_criterion_06_schedule_and_decay():
    cfg = TrainConfig()
    checks = {
        "warm_end": lr_at(5, cfg) == 1e-4,
        "cycle_end": lr_at(30, cfg) == 1e-6,
        "mid_cycle": abs(lr_at(17.5, cfg) - 5.05e-5) < 1e-12,
        "decay": abs(supervision_decay(0.4, 1000, 1000.0) - 0.4 / math.e) < 1e-9,
    }
    ok = _verdict(6, "schedule and decay values", all(checks.values()))
    assert ok, checks


def test_criterion_07_loss_degeneracies():
    worst_lnk = 0.0
    for k in (2, 4, 9):
        logits = Tensor(np.zeros((2, k, 4, 4)))
        target = np.random.default_rng(k).integers(0, k, (2, 4, 4))
        loss = float(F.weighted_ce(logits, target, np.ones(k)).data.reshape(()))
        worst_lnk = max(worst_lnk, abs(loss - math.log(k)))

    rng = np.random.default_rng(0)
    outputs = {"final": Tensor(rng.standard_normal((1, 3, 8, 8))),
               "aux": [Tensor(rng.standard_normal((1, 3, 4, 4)))]}
    target = rng.integers(0, 3, (1, 8, 8))
    w = np.asarray([1.0, 2.0, 0.5])
    with_zero_beta = float(total_loss(outputs, target, w, 0, TrainConfig(),
                                      betas=(0.0,)).data.reshape(()))
    final_only = float(F.weighted_ce(outputs["final"], target, w).data.reshape(()))
    gap = abs(with_zero_beta - final_only)

    ok = _verdict(7, "loss degeneracies", worst_lnk < 1e-9 and gap < 1e-12)
    assert ok, {"uniform_ce_gap": worst_lnk, "beta_zero_gap": gap}


def test_criterion_08_metrics_oracle():
    rng = np.random.default_rng(0)
    exact = True
    for _ in range(200):
        gt = rng.integers(0, 3, (8, 8))
        pred = rng.integers(0, 3, (8, 8))
        got = scores(accumulate(ConfusionMatrix(3), pred, gt))
        want = oracle_scores(pred, gt, 3)
        for key in ("iou", "f1", "recall", "mcc"):
            if np.max(np.abs(np.asarray(got[key]) - np.asarray(want[key]))) > 1e-12:
                exact = False
        for key in ("pixel_acc", "bal_acc", "fwiou"):
            if abs(got[key] - want[key]) > 1e-12:
                exact = False

    gt = rng.integers(0, 3, (8, 8))
    perfect = scores(accumulate(ConfusionMatrix(3), gt, gt))
    perfect_ok = (perfect["miou"] == 1.0 and perfect["macro_f1"] == 1.0
                  and np.all(perfect["mcc"] == 1.0))
    ok = _verdict(8, "metrics oracle", exact and perfect_ok)
    assert ok, {"exact": exact, "perfect": perfect_ok}


def test_criterion_09_toy_training():
    scfg = SynthConfig(n_samples=250, size=64, num_classes=4, seed=0,
                       splits=(0.8, 0.2, 0.0))
    samples = [generate_sample(scfg, i) for i in range(250)]
    train, val = samples[:200], samples[200:]

    t0 = time.perf_counter()
    model = build(ModelConfig(num_classes=4, input_size=64), seed=0)
    history = fit(model, train, val, TrainConfig(epochs=20, seed=0))
    elapsed = time.perf_counter() - t0

    records = history.records
    best_miou = max(r["val_miou"] for r in records)
    best_f1 = max(r["val_f1"] for r in records)
    checks = {
        "miou": best_miou >= 0.50,
        "f1": best_f1 >= 0.60,
        "loss_decreases": records[-1]["train_loss"] < records[0]["train_loss"],
        "runtime": elapsed < 1800.0,
    }

    # determinism across runs: a fresh model trained on the same seeds must
    # reproduce the first epochs of the full run bit for bit (each epoch has
    # its own seeded stream, so an identical prefix pins the whole schedule)
    rerun = fit(build(ModelConfig(num_classes=4, input_size=64), seed=0),
                train, val, TrainConfig(epochs=3, seed=0))
    checks["deterministic"] = rerun.records == records[:3]

    ok = _verdict(9, "toy training", all(checks.values()))
    assert ok, {**checks, "best_miou": best_miou, "best_f1": best_f1,
                "seconds": elapsed}


def test_criterion_10_persistence(tmp_path):
    cfg = ModelConfig(num_classes=3, levels=3, widths=(8, 16, 32), input_size=32,
                      tikan=TiKANConfig(gamma_c=8, dropout=0.0))
    model = build(cfg, seed=0)
    p1, p2 = tmp_path / "a.fkpt", tmp_path / "b.fkpt"
    save(model, p1)
    again = load(p1)
    save(again, p2)
    bytes_equal = p1.read_bytes() == p2.read_bytes()

    x = Tensor(np.random.default_rng(1).uniform(0, 1, (1, 3, 32, 32))
               .astype(np.float32))
    before = model.forward(x, training=False)["final"].data.tobytes()
    after = again.forward(x, training=False)["final"].data.tobytes()
    ok = _verdict(10, "persistence", bytes_equal and before == after)
    assert ok, {"bytes_equal": bytes_equal, "forward_equal": before == after}


def test_criterion_11_dli_property():
    rng = np.random.default_rng(0)
    donors = [generate_sample(SynthConfig(n_samples=1, size=64, num_classes=4,
                                          seed=123), i) for i in range(20)]
    bank = make_patch_bank(donors, 4, rng)
    bank_ok = all(bank[c] for c in (1, 2, 3))

    host_cfg = SynthConfig(n_samples=1, size=64, num_classes=4, seed=11,
                           max_density=0.08)
    hosts = [generate_sample(host_cfg, i) for i in range(50)]

    before = np.zeros(4, dtype=np.int64)
    after = np.zeros(4, dtype=np.int64)
    no_overwrite = True
    for host in hosts:
        out, _ = dli_inject(host, bank, rng, max_patches=3)
        before += np.bincount(host.mask.ravel(), minlength=4)
        after += np.bincount(out.mask.ravel(), minlength=4)
        changed = out.mask != host.mask
        if np.any(host.mask[changed] != 0):
            no_overwrite = False
    share_up = bool(np.all(after[1:] > before[1:]))

    ok = _verdict(11, "DLI property", bank_ok and share_up and no_overwrite)
    assert ok, {"bank": bank_ok, "share_up": share_up,
                "no_overwrite": no_overwrite,
                "before": before.tolist(), "after": after.tolist()}
