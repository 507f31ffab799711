"""Evaluation metrics derived from a single K x K confusion matrix.

Conventions (shared with the brute-force oracle in the test suite):
- IoU/Dice of a class with empty union are 1.0 (vacuously perfect).
- Per-class one-vs-rest MCC with a zero denominator is 0, except that a
  purely diagonal confusion matrix scores 1.0 for every class.
- Balanced accuracy averages recall only over classes present in the
  ground truth.
"""

import numpy as np

from .errors import ConfigurationError, DataError


class ConfusionMatrix:
    """counts[g, p] = number of pixels with ground truth g predicted p."""

    def __init__(self, num_classes):
        if num_classes < 1:
            raise ConfigurationError("num_classes must be >= 1")
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    @property
    def total(self):
        return int(self.counts.sum())

    def copy(self):
        cm = ConfusionMatrix(self.num_classes)
        cm.counts = self.counts.copy()
        return cm

    def __iadd__(self, other):
        self.counts += other.counts
        return self


def accumulate(cm, pred_mask, gt_mask, ignore_label=None):
    """Add one count per non-ignored pixel; returns cm."""
    pred = np.asarray(pred_mask).ravel()
    gt = np.asarray(gt_mask).ravel()
    if pred.shape != gt.shape:
        raise ConfigurationError("pred and gt masks must have the same shape")
    if ignore_label is not None:
        keep = gt != ignore_label
        pred = pred[keep]
        gt = gt[keep]
    if pred.size == 0:
        return cm
    k = cm.num_classes
    if gt.min() < 0 or gt.max() >= k or pred.min() < 0 or pred.max() >= k:
        raise DataError("mask values out of range [0, K)")
    binc = np.bincount(gt.astype(np.int64) * k + pred.astype(np.int64), minlength=k * k)
    cm.counts += binc.reshape(k, k)
    return cm


def scores(cm, include_background=True):
    """Per-class and aggregate metrics; include_background=False drops class 0
    from the macro means (IoU, F1, MCC) only."""
    if cm.total == 0:
        raise ConfigurationError("empty confusion matrix")
    c = cm.counts.astype(np.float64)
    k = cm.num_classes
    total = c.sum()
    tp = np.diag(c)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp
    tn = total - tp - fp - fn

    union = tp + fp + fn
    iou = np.where(union > 0, tp / np.where(union > 0, union, 1), 1.0)
    dice_den = 2 * tp + fp + fn
    f1 = np.where(dice_den > 0, 2 * tp / np.where(dice_den > 0, dice_den, 1), 1.0)
    present = c.sum(axis=1) > 0
    recall = np.where(present, tp / np.where(present, tp + fn, 1), 0.0)

    if (c.sum() - tp.sum()) == 0:
        mcc = np.ones(k)
    else:
        denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
        num = tp * tn - fp * fn
        mcc = np.where(denom > 0, num / np.sqrt(np.where(denom > 0, denom, 1)), 0.0)

    sel = np.ones(k, dtype=bool)
    if not include_background:
        sel[0] = False
    if not sel.any():
        raise ConfigurationError("no classes left after dropping background")

    freq = c.sum(axis=1) / total
    return {
        "iou": iou,
        "f1": f1,
        "recall": recall,
        "mcc": mcc,
        "miou": float(iou[sel].mean()),
        "macro_f1": float(f1[sel].mean()),
        "mean_mcc": float(mcc[sel].mean()),
        "pixel_acc": float(tp.sum() / total),
        "bal_acc": float(recall[present].mean()) if present.any() else 0.0,
        "fwiou": float((freq * iou).sum()),
    }


def report(cm):
    """Fixed-key metric record for machine consumption."""
    with_bg = scores(cm, include_background=True)
    if cm.num_classes > 1:
        no_bg = scores(cm, include_background=False)
    else:
        no_bg = with_bg
    return {
        "f1_bg": with_bg["macro_f1"],
        "f1_nobg": no_bg["macro_f1"],
        "miou_bg": with_bg["miou"],
        "miou_nobg": no_bg["miou"],
        "pixel_acc": with_bg["pixel_acc"],
        "bal_acc": with_bg["bal_acc"],
        "mean_mcc": with_bg["mean_mcc"],
        "fwiou": with_bg["fwiou"],
    }
