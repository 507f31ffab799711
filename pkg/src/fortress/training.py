"""Training loop: class weighting, deep-supervision loss with an exponential
auxiliary decay, warm restarts with linear warm-up, decoupled-decay Adam,
and a deterministic fit loop with gradient accumulation and early stopping."""

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import model as model_io
from .dataio import load_batches
from .errors import ConfigurationError
from .metrics import ConfusionMatrix, accumulate, report
from .tensor import Tape, Tensor, add, backward, scale, weighted_ce

# fixed per-class weights for the standard nine-class labeling
FIXED_CLASS_WEIGHTS = (1.0, 3.0, 1.0, 1.0, 1.2, 1.5, 3.0, 1.2, 1.3)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch: int = 16
    accum_steps: int = 2
    lr_max: float = 1e-4
    lr_min: float = 1e-6
    warmup_epochs: int = 5
    restart_epochs: int = 25
    weight_decay: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    patience: int = 15
    tau: float = 1000.0
    seed: int = 0
    class_weight_mode: str = "mean_freq"
    input_size: int = None  # resize batches when set

    def __post_init__(self):
        if self.epochs < 1 or self.batch < 1 or self.accum_steps < 1:
            raise ConfigurationError("epochs, batch and accum_steps must be >= 1")
        if not 0.0 < self.lr_min <= self.lr_max:
            raise ConfigurationError("need 0 < lr_min <= lr_max")
        if self.warmup_epochs < 0 or self.restart_epochs < 1:
            raise ConfigurationError("bad schedule lengths")
        self.betas = tuple(float(b) for b in self.betas)
        if not (0.0 <= self.betas[0] < 1.0 and 0.0 <= self.betas[1] < 1.0):
            raise ConfigurationError("betas must lie in [0, 1)")
        if self.tau <= 0.0:
            raise ConfigurationError("tau must be positive")
        if self.class_weight_mode not in ("literal", "mean_freq", "fixed"):
            raise ConfigurationError("class_weight_mode must be literal, mean_freq or fixed")


def class_weights(counts, mode):
    """Per-class loss weights from per-class pixel counts.

    literal: 1/N_k, scaled so the weights average to 1.
    mean_freq: (N_total/K) / N_k (median-free frequency balancing).
    fixed: the standard nine-class table (requires K == 9).
    """
    counts = np.asarray(counts, dtype=np.float64)
    k = counts.size
    if mode == "fixed":
        if k != len(FIXED_CLASS_WEIGHTS):
            raise ConfigurationError(
                f"fixed weights are defined for {len(FIXED_CLASS_WEIGHTS)} classes, got {k}"
            )
        return np.asarray(FIXED_CLASS_WEIGHTS, dtype=np.float64)
    if np.any(counts <= 0):
        raise ConfigurationError("every class needs a positive pixel count")
    if mode == "literal":
        w = 1.0 / counts
        return w * (k / w.sum())
    if mode == "mean_freq":
        return (counts.sum() / k) / counts
    raise ConfigurationError(f"unknown class_weight_mode '{mode}'")


def lr_at(epoch, cfg):
    """Linear warm-up from lr_min to lr_max, then cosine cycles that restart
    every restart_epochs; a whole number of cycles lands on lr_min."""
    e = float(epoch)
    if e < cfg.warmup_epochs:
        return cfg.lr_min + (cfg.lr_max - cfg.lr_min) * e / cfg.warmup_epochs
    u = e - cfg.warmup_epochs
    t = math.fmod(u, cfg.restart_epochs)
    if t == 0.0 and u > 0.0:
        t = float(cfg.restart_epochs)
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (
        1.0 + math.cos(math.pi * t / cfg.restart_epochs)
    )


def supervision_decay(beta, iteration, tau):
    """Auxiliary-head weight after `iteration` optimizer steps."""
    return beta * math.exp(-float(iteration) / tau)


def total_loss(outputs, target, weights, iteration, cfg, betas=(0.4, 0.3, 0.2)):
    """CE on the final head plus decayed CE on each auxiliary head.

    Auxiliary targets are the full-resolution mask strided down to the head's
    resolution; each auxiliary term carries beta_d * exp(-iteration / tau).
    """
    loss = weighted_ce(outputs["final"], target, weights)
    h_full = target.shape[1]
    for beta, aux in zip(betas, outputs["aux"]):
        s = h_full // aux.shape[2]
        sub = target[:, ::s, ::s]
        loss = add(loss, scale(weighted_ce(aux, sub, weights),
                               supervision_decay(beta, iteration, cfg.tau)))
    return loss


class AdamW:
    """Adam with decoupled weight decay over a fixed, named parameter set."""

    def __init__(self, params, cfg):
        self.params = dict(params)  # name -> Tensor
        self.cfg = cfg
        self.t = 0
        self.m = {n: np.zeros_like(p.data, dtype=np.float64) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data, dtype=np.float64) for n, p in self.params.items()}

    def step(self, grads, lr):
        """grads: name -> array (missing names get no update this step)."""
        self.t += 1
        b1, b2 = self.cfg.betas
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            g = g.astype(np.float64)
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            mhat = self.m[name] / bc1
            vhat = self.v[name] / bc2
            upd = lr * (mhat / (np.sqrt(vhat) + self.cfg.eps)
                        + self.cfg.weight_decay * p.data.astype(np.float64))
            p.data -= upd.astype(p.data.dtype)


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    best_epoch: int = -1
    best_f1: float = -1.0
    stopped_early: bool = False

    def append(self, **kv):
        self.records.append(dict(kv))


def evaluate(model, samples, weights, cfg, iteration=0):
    """(mean total loss, metric report) over a sample list in eval mode."""
    cm = ConfusionMatrix(model.cfg.num_classes)
    losses = []
    for x, y in load_batches(samples, cfg.batch, rng=None, size=cfg.input_size):
        xt = Tensor(x.astype(model.cfg.np_dtype))
        out = model.forward(xt, training=False)
        loss = total_loss(out, y, weights, iteration, cfg,
                          betas=model.cfg.supervision_weights)
        losses.append(float(loss.data.reshape(())))
        accumulate(cm, out["final"].data.argmax(axis=1), y)
    return float(np.mean(losses)), report(cm)


def fit(model, train_samples, val_samples, cfg, checkpoint_dir=None, log=None):
    """Deterministic training; model selection and early stopping track the
    validation macro F1 over non-background classes."""
    if not train_samples or not val_samples:
        raise ConfigurationError("need non-empty train and val sets")
    k = model.cfg.num_classes
    counts = np.zeros(k, dtype=np.int64)
    for s in train_samples:
        counts += np.bincount(s.mask.ravel(), minlength=k)
    if cfg.class_weight_mode != "fixed" and np.any(counts == 0):
        raise ConfigurationError("a class has no pixels in the training set")
    weights = class_weights(counts, cfg.class_weight_mode)

    named = dict(model.named_parameters())
    opt = AdamW(named, cfg)
    history = TrainHistory()
    best_state = None
    since_best = 0
    iteration = 0

    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        rng = np.random.default_rng([cfg.seed, epoch])
        batches = list(load_batches(train_samples, cfg.batch, rng, size=cfg.input_size))
        epoch_losses = []
        for start in range(0, len(batches), cfg.accum_steps):
            group = batches[start : start + cfg.accum_steps]
            accum = {}
            for x, y in group:
                xt = Tensor(x.astype(model.cfg.np_dtype))
                with Tape() as tape:
                    out = model.forward(xt, training=True)
                    loss = total_loss(out, y, weights, iteration, cfg,
                                      betas=model.cfg.supervision_weights)
                epoch_losses.append(float(loss.data.reshape(())))
                grads = backward(tape, loss)
                by_id = {id(p): n for n, p in named.items()}
                for t, g in grads.items():
                    name = by_id.get(id(t))
                    if name is None:
                        continue
                    if name in accum:
                        accum[name] = accum[name] + g
                    else:
                        accum[name] = g
            inv = 1.0 / len(group)
            opt.step({n: g * inv for n, g in accum.items()}, lr)
            iteration += 1

        val_loss, rep = evaluate(model, val_samples, weights, cfg, iteration)
        history.append(
            epoch=epoch,
            train_loss=float(np.mean(epoch_losses)),
            val_loss=val_loss,
            val_miou=rep["miou_nobg"],
            val_f1=rep["f1_nobg"],
            lr=lr,
        )
        if log is not None:
            log(f"epoch {epoch:3d} lr {lr:.3e} train {np.mean(epoch_losses):.4f} "
                f"val {val_loss:.4f} miou {rep['miou_nobg']:.4f} f1 {rep['f1_nobg']:.4f}")

        if rep["f1_nobg"] > history.best_f1:
            history.best_f1 = rep["f1_nobg"]
            history.best_epoch = epoch
            best_state = model.state_dict()
            since_best = 0
        else:
            since_best += 1
        if checkpoint_dir is not None:
            model_io.save(model, os.path.join(checkpoint_dir, "last.fkpt"))
        if since_best > cfg.patience:
            history.stopped_early = True
            break

    if best_state is not None:
        model.load_state_dict(best_state)
    if checkpoint_dir is not None:
        model_io.save(model, os.path.join(checkpoint_dir, "best.fkpt"))
    return history
