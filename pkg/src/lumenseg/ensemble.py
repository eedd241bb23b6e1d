"""Averaging ensemble, binarization, and the overlap metrics.

The ensemble output is the pointwise arithmetic mean of the member
probability maps; metrics are computed per frame from exact pixel counts
and macro-averaged over frames. Degenerate counts follow the common
conventions: both masks empty scores 1.0, one-sided empty scores 0.0.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

ABLATION_SUBSETS = (
    ("m1", "m2"),
    ("M1", "M2"),
    ("M1", "m1"),
    ("M2", "m2"),
    ("m1", "m2", "M1", "M2"),
)


def ensemble_average(preds):
    """Pointwise mean of k probability maps with identical shapes."""
    if len(preds) == 0:
        raise ConfigError("ensemble_average needs at least one prediction")
    first = np.asarray(preds[0], dtype=np.float64)
    for p in preds[1:]:
        if np.shape(p) != first.shape:
            raise ShapeError(
                f"ensemble_average shape mismatch: {np.shape(p)} vs {first.shape}"
            )
    return np.mean(np.stack([np.asarray(p, dtype=np.float64) for p in preds]), axis=0)


def binarize(prob_map, threshold=0.5):
    """Threshold a probability map; pixels >= threshold become foreground."""
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"threshold must lie in (0,1), got {threshold}")
    return (np.asarray(prob_map) >= threshold).astype(np.uint8)


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


def confusion(pred, truth):
    """Exact pixel counts between two binary masks."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"confusion shape mismatch: {pred.shape} vs {truth.shape}")
    p = pred.astype(bool)
    t = truth.astype(bool)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = int(np.count_nonzero(~p & ~t))
    return ConfusionCounts(tp, fp, fn, tn)


def dsc(c):
    denom = 2 * c.tp + c.fn + c.fp
    if denom == 0:
        return 1.0
    return 2.0 * c.tp / denom


def precision(c):
    if c.tp + c.fp == 0:
        return 1.0 if c.fn == 0 else 0.0
    return c.tp / (c.tp + c.fp)


def recall(c):
    if c.tp + c.fn == 0:
        return 1.0 if c.fp == 0 else 0.0
    return c.tp / (c.tp + c.fn)


def frame_metrics(prob_map, truth, threshold=0.5):
    """(dsc, precision, recall) of one thresholded map against its mask."""
    counts = confusion(binarize(prob_map, threshold), truth)
    return dsc(counts), precision(counts), recall(counts)


def evaluate_maps(prob_maps, truths, threshold=0.5):
    """Per-frame metric rows plus macro means for a stack of maps."""
    rows = []
    for k in range(len(prob_maps)):
        d, p, r = frame_metrics(prob_maps[k], truths[k], threshold)
        rows.append({"frame": k, "dsc": d, "precision": p, "recall": r})
    summary = {
        "dsc": float(np.mean([r["dsc"] for r in rows])) if rows else float("nan"),
        "precision": float(np.mean([r["precision"] for r in rows])) if rows else float("nan"),
        "recall": float(np.mean([r["recall"] for r in rows])) if rows else float("nan"),
    }
    return rows, summary


def ablation_eval(member_maps, truths, threshold=0.5, subsets=ABLATION_SUBSETS):
    """Metric table for ensemble subsets, one row per subset.

    ``member_maps`` maps a variant name to its stack of per-frame
    probability maps over the same test frames. Returns (rows, per-frame
    Dice lists by subset) with rows in Table-layout order: DSC, Prec, Rec.
    """
    rows = []
    dsc_groups = {}
    for subset in subsets:
        missing = [name for name in subset if name not in member_maps]
        if missing:
            raise ConfigError(f"ablation subset {subset} missing models: {missing}")
        label = "(" + ",".join(subset) + ")"
        per_frame = []
        for k in range(len(truths)):
            fused = ensemble_average([member_maps[name][k] for name in subset])
            per_frame.append(frame_metrics(fused, truths[k], threshold))
        rows.append(
            {
                "ensemble": label,
                "dsc": float(np.mean([m[0] for m in per_frame])),
                "precision": float(np.mean([m[1] for m in per_frame])),
                "recall": float(np.mean([m[2] for m in per_frame])),
            }
        )
        dsc_groups[label] = [m[0] for m in per_frame]
    return rows, dsc_groups
