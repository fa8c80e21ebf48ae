"""File formats: JSONL datasets and predictions, JSON model files, reports.

Ordinal labels are 0-based on disk and 1-based in memory; the shift
happens here and nowhere else. Floats are written with ``repr``, which is
the shortest decimal string that round-trips exactly (at most 17
significant digits).
"""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .core import Bag, Dataset, OrdinalScale
from .metrics import FRAME_KEYS, SEQUENCE_KEYS, MetricsReport
from .models import DISPLAY_NAMES, Model, Prediction

FORMAT_VERSION = 1
MANIFEST = "manifest.json"


class FormatError(ValueError):
    """Malformed file contents."""


def _dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, allow_nan=False, separators=(", ", ": "))


def _write_lines(path, lines: Iterable[str]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")


def _read_jsonl(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for k, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise FormatError(f"{path}:{k}: {exc}") from None
    return out


# -- datasets -----------------------------------------------------------------------

def bag_to_record(bag: Bag) -> dict:
    rec = {"id": bag.id, "label": bag.label - 1,
           "instances": [[float(v) for v in row] for row in bag.instances]}
    if bag.instance_labels is not None:
        rec["instance_labels"] = [int(h) - 1 for h in bag.instance_labels]
    return rec


def record_to_bag(rec: dict) -> Bag:
    try:
        h = rec.get("instance_labels")
        return Bag(str(rec["id"]), rec["instances"], int(rec["label"]) + 1,
                   None if h is None else [int(v) + 1 for v in h])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"bad bag record {str(rec)[:80]}: {exc}") from None


def write_dataset(path, dataset: Dataset):
    _write_lines(path, (_dumps(bag_to_record(b)) for b in dataset.bags))


def _manifest_levels(path) -> Optional[int]:
    here = Path(path).resolve().parent
    for m in (here / MANIFEST, here.parent / MANIFEST):
        if m.exists():
            with open(m, encoding="utf-8") as fh:
                cfg = json.load(fh).get("config", {})
            if "num_levels" in cfg:
                return int(cfg["num_levels"])
    return None


def read_dataset(path, num_levels: Optional[int] = None) -> Dataset:
    """Load a JSONL dataset.

    The number of levels comes from ``num_levels``, else from a
    ``manifest.json`` in the file's directory or its parent, else from
    the largest label seen.
    """
    bags = [record_to_bag(r) for r in _read_jsonl(path)]
    if num_levels is None:
        num_levels = _manifest_levels(path)
    if num_levels is None:
        seen = [b.label for b in bags] + [int(h) for b in bags if b.instance_labels is not None
                                          for h in b.instance_labels]
        num_levels = max(max(seen, default=1), 2)
    dims = [b.dim for b in bags if b.instances.ndim == 2 and b.length]
    dim = max(set(dims), key=dims.count) if dims else 0
    return Dataset(tuple(bags), OrdinalScale(num_levels), dim)


# -- models -------------------------------------------------------------------------

def _encode_param(v):
    if isinstance(v, np.ndarray):
        return {"shape": list(v.shape), "values": [float(x) for x in v.ravel()]}
    return float(v)


def _decode_param(v):
    if isinstance(v, dict):
        return np.array(v["values"], dtype=float).reshape(v["shape"])
    return float(v)


def model_to_dict(model: Model) -> dict:
    meta = {k: model.train_meta.get(k) for k in ("seed", "alpha", "iterations")}
    meta.update({k: v for k, v in model.train_meta.items() if k not in meta})
    return {
        "format_version": FORMAT_VERSION,
        "method": model.method,
        "scale": model.num_levels,
        "feature_dim": model.feature_dim,
        "params": {k: _encode_param(v) for k, v in model.params.items()},
        "train_meta": meta,
    }


def model_from_dict(d: dict) -> Model:
    if d.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported model format_version {d.get('format_version')!r}")
    try:
        return Model(d["method"], int(d["scale"]), int(d["feature_dim"]),
                     {k: _decode_param(v) for k, v in d["params"].items()},
                     dict(d.get("train_meta", {})))
    except KeyError as exc:
        raise FormatError(f"model file lacks field {exc}") from None


def save_model(path, model: Model):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(model_to_dict(model), fh, indent=1, allow_nan=False)
        fh.write("\n")


def load_model(path) -> Model:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


# -- predictions ----------------------------------------------------------------------

def prediction_to_record(p: Prediction, level: str = "both") -> dict:
    rec = {"id": p.id}
    if level in ("sequence", "both"):
        rec["bag_pred"] = int(p.bag_pred) - 1
        if p.bag_posterior is not None:
            rec["bag_posterior"] = [float(v) for v in p.bag_posterior]
    if level in ("frame", "both"):
        rec["frame_preds"] = [int(v) - 1 for v in p.frame_preds]
    return rec


def record_to_prediction(rec: dict) -> Prediction:
    post = rec.get("bag_posterior")
    frames = rec.get("frame_preds")
    return Prediction(str(rec["id"]),
                      int(rec["bag_pred"]) + 1 if "bag_pred" in rec else None,
                      None if frames is None else np.array(frames, dtype=int) + 1,
                      None if post is None else np.array(post, dtype=float))


def write_predictions(path, predictions, level: str = "both"):
    _write_lines(path, (_dumps(prediction_to_record(p, level)) for p in predictions))


def read_predictions(path) -> dict:
    out = {}
    for rec in _read_jsonl(path):
        p = record_to_prediction(rec)
        if p.id in out:
            raise FormatError(f"duplicate prediction id {p.id!r}")
        out[p.id] = p
    return out


# -- reports ---------------------------------------------------------------------------

def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, allow_nan=False)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _cell(v):
    return "  n/a" if v is None else f"{v:5.2f}"


def format_table(rows: dict) -> str:
    """Aligned text table; ``rows`` maps a row name to ``{"frame": .., "sequence": ..}``."""
    head = ("Frame-level".center(6 * len(FRAME_KEYS) - 1) + " | "
            + "Sequence-level".center(6 * len(SEQUENCE_KEYS) - 1))
    cols = " ".join(f"{k.upper():>5}" for k in FRAME_KEYS) + " | " + \
        " ".join(f"{k.upper():>5}" for k in SEQUENCE_KEYS)
    width = max([len(n) for n in rows] + [8])
    lines = [" " * (width + 1) + head, " " * (width + 1) + cols]
    for name, r in rows.items():
        fr = r.get("frame") or {}
        sq = r.get("sequence") or {}
        lines.append(f"{name:<{width}} " + " ".join(_cell(fr.get(k)) for k in FRAME_KEYS) + " | "
                     + " ".join(_cell(sq.get(k)) for k in SEQUENCE_KEYS))
    return "\n".join(lines)


def format_report(report: MetricsReport, name: str = "model") -> str:
    text = format_table({name: report.to_dict()})
    if report.flags:
        text += "\n" + "\n".join(f"note: {f}" for f in report.flags)
    return text


def display_name(method: str) -> str:
    return DISPLAY_NAMES.get(method, method)


def worker_count() -> int:
    """Worker processes allowed by ``MIDORF_THREADS`` (0 or unset = all cores)."""
    raw = os.environ.get("MIDORF_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"MIDORF_THREADS must be an integer, got {raw!r}") from None
    return max(1, os.cpu_count() or 1) if n <= 0 else n
