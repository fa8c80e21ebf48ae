"""Frame- and sequence-level evaluation metrics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .core import Dataset


class MetricError(ValueError):
    """A metric is undefined for the given inputs (e.g. constant series)."""


def _pair(pred, truth, min_len=1):
    p = np.asarray(pred, float).ravel()
    t = np.asarray(truth, float).ravel()
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {t.size} targets")
    if p.size < min_len:
        raise MetricError(f"need at least {min_len} values, got {p.size}")
    return p, t


def pearson_corr(pred, truth) -> float:
    p, t = _pair(pred, truth, 2)
    dp, dt = p - p.mean(), t - t.mean()
    denom = np.sqrt(np.dot(dp, dp) * np.dot(dt, dt))
    if denom == 0:
        raise MetricError("correlation is undefined for a constant series")
    return float(np.clip(np.dot(dp, dt) / denom, -1.0, 1.0))


def icc(pred, truth) -> float:
    """ICC(3,1): two-way mixed, consistency, single rater, with the two
    series treated as raters."""
    p, t = _pair(pred, truth, 2)
    Y = np.column_stack([p, t])
    n, k = Y.shape
    grand = Y.mean()
    ss_rows = k * np.sum((Y.mean(axis=1) - grand) ** 2)
    ss_cols = n * np.sum((Y.mean(axis=0) - grand) ** 2)
    ss_err = np.sum((Y - grand) ** 2) - ss_rows - ss_cols
    bms = ss_rows / (n - 1)
    ems = max(ss_err, 0.0) / ((n - 1) * (k - 1))
    denom = bms + (k - 1) * ems
    if denom <= 0:
        raise MetricError("ICC is undefined without variance")
    return float((bms - ems) / denom)


def mae(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.mean(np.abs(p - t)))


def accuracy(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.mean(p == t))


def f1_macro(pred, truth, num_levels: Optional[int] = None) -> float:
    """Unweighted mean of per-class F1.

    Classes absent from both ``pred`` and ``truth`` are left out of the mean.
    """
    p, t = _pair(pred, truth)
    p, t = p.astype(int), t.astype(int)
    classes = np.union1d(p, t)
    if num_levels is not None:
        classes = classes[(classes >= 1) & (classes <= num_levels)]
    scores = []
    for c in classes:
        tp = np.sum((p == c) & (t == c))
        fp = np.sum((p == c) & (t != c))
        fn = np.sum((p != c) & (t == c))
        scores.append(2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0)
    return float(np.mean(scores)) if scores else 0.0


FRAME_KEYS = ("corr", "mae", "icc")
SEQUENCE_KEYS = ("corr", "mae", "icc", "acc", "f1")


@dataclass
class MetricsReport:
    frame: Optional[dict]
    sequence: dict
    frames: int
    sequences: int
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"frame": self.frame, "sequence": self.sequence,
                "counts": {"frames": self.frames, "sequences": self.sequences},
                "flags": list(self.flags)}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        c = d.get("counts", {})
        return cls(d.get("frame"), d["sequence"], c.get("frames", 0), c.get("sequences", 0),
                   list(d.get("flags", [])))


def _safe(name, fn, flags, *args):
    try:
        return fn(*args)
    except MetricError as exc:
        flags.append(f"{name}: {exc}")
        return None


def evaluate(predictions, dataset: Dataset) -> MetricsReport:
    """Score predictions against a labelled dataset.

    ``predictions`` is a mapping or sequence of objects with ``id``,
    ``bag_pred`` and ``frame_preds`` (see :class:`midorf.models.Prediction`),
    joined to bags by id. Frame metrics pool every frame of every bag and
    are omitted (with a flag) when the dataset lacks instance labels.
    """
    if not isinstance(predictions, Mapping):
        predictions = {p.id: p for p in predictions}
    missing = [b.id for b in dataset.bags if b.id not in predictions]
    if missing:
        raise KeyError(f"no prediction for bag id(s): {', '.join(missing[:10])}")
    L = dataset.scale.num_levels
    flags: list = []

    bag_pred = np.array([predictions[b.id].bag_pred for b in dataset.bags], float)
    bag_true = dataset.labels.astype(float)
    seq = {
        "corr": _safe("sequence corr", pearson_corr, flags, bag_pred, bag_true),
        "mae": mae(bag_pred, bag_true),
        "icc": _safe("sequence icc", icc, flags, bag_pred, bag_true),
        "acc": accuracy(bag_pred, bag_true),
        "f1": f1_macro(bag_pred, bag_true, L),
    }

    frame = None
    n_frames = 0
    if all(b.instance_labels is not None for b in dataset.bags):
        fp, ft = [], []
        for b in dataset.bags:
            f = np.asarray(predictions[b.id].frame_preds)
            if f.shape != (b.length,):
                raise ValueError(f"bag {b.id}: {f.size} frame predictions for {b.length} frames")
            fp.append(f)
            ft.append(b.instance_labels)
        fp = np.concatenate(fp).astype(float)
        ft = np.concatenate(ft).astype(float)
        n_frames = fp.size
        frame = {
            "corr": _safe("frame corr", pearson_corr, flags, fp, ft),
            "mae": mae(fp, ft),
            "icc": _safe("frame icc", icc, flags, fp, ft),
        }
    else:
        flags.append("frame metrics omitted: dataset has no instance labels")
    return MetricsReport(frame, seq, n_frames, len(dataset.bags), flags)


def average_reports(reports) -> dict:
    """Mean of each metric over reports, skipping undefined entries."""
    out = {"frame": {}, "sequence": {}}
    for level, keys in (("frame", FRAME_KEYS), ("sequence", SEQUENCE_KEYS)):
        for k in keys:
            vals = [r.to_dict()[level][k] for r in reports
                    if r.to_dict()[level] is not None and r.to_dict()[level][k] is not None]
            out[level][k] = float(np.mean(vals)) if vals else None
    return out
