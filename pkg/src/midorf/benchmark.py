"""Multi-dataset benchmark: every method, validation-selected alpha, test metrics.

Each (dataset, method) job regenerates its dataset from the seed, so jobs
are independent and results do not depend on the worker count.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .baselines import TRAINERS
from .io import format_table, write_json, write_predictions, model_to_dict, display_name
from .learning import TrainConfig, select_alpha
from .metrics import MetricsReport, average_reports, evaluate
from .models import METHODS, predict_dataset
from .synthgen import SynthConfig, generate_dataset

log = logging.getLogger(__name__)


def mior_violations(predictions) -> int:
    """Bags whose largest instance prediction exceeds the bag prediction."""
    return sum(int(np.max(p.frame_preds) > p.bag_pred) for p in predictions)


def run_job(synth: dict, index: int, method: str, config: dict, out_dir: str) -> dict:
    """Train ``method`` on dataset ``index`` and score it on the test split."""
    cfg = SynthConfig.from_dict(synth)
    train, test, val, _ = generate_dataset(cfg, index)
    tc = TrainConfig(**config)
    start = time.perf_counter()
    alpha, model = select_alpha(train, val, tc, trainer=TRAINERS[method])
    preds = predict_dataset(model, test)
    report = evaluate(preds, test)
    elapsed = time.perf_counter() - start
    base = Path(out_dir) / f"dataset-{index:02d}"
    write_predictions(base / f"{method}.predictions.jsonl", preds)
    write_json(base / f"{method}.model.json", model_to_dict(model))
    out = {"dataset": index, "method": method, "alpha": alpha, "seconds": elapsed,
           "mior_violations": mior_violations(preds), "report": report.to_dict()}
    write_json(base / f"{method}.report.json", out)
    log.info("dataset %d %s alpha=%g %.1fs", index, method, alpha, elapsed)
    return out


def _safe_job(args):
    try:
        return run_job(*args)
    except Exception as exc:  # noqa: BLE001 - a failed job is recorded, the run continues
        log.error("dataset %d %s failed: %s", args[1], args[2], exc)
        return {"dataset": args[1], "method": args[2], "error": f"{type(exc).__name__}: {exc}"}


def summarize(results, methods) -> dict:
    """Average per-dataset reports into one row per method."""
    rows = {}
    for m in methods:
        ok = sorted((r for r in results if r["method"] == m and "report" in r),
                    key=lambda r: r["dataset"])
        failed = [r for r in results if r["method"] == m and "error" in r]
        avg = average_reports([MetricsReport.from_dict(r["report"]) for r in ok]) if ok else \
            {"frame": None, "sequence": None}
        rows[m] = {
            "frame": avg["frame"], "sequence": avg["sequence"],
            "datasets": [r["dataset"] for r in ok],
            "alphas": [r["alpha"] for r in ok],
            "mior_violations": int(sum(r["mior_violations"] for r in ok)),
            "seconds": float(sum(r["seconds"] for r in ok)),
            "failures": [{"dataset": r["dataset"], "error": r["error"]} for r in failed],
        }
    return rows


def run_benchmark(out_dir, synth: SynthConfig = SynthConfig(), methods=METHODS,
                  config: TrainConfig = TrainConfig(), workers: int = 1) -> dict:
    """Run every method on every synthetic dataset; write and return the summary."""
    unknown = [m for m in methods if m not in TRAINERS]
    if unknown:
        raise ValueError(f"unknown method(s): {unknown}")
    out_dir = Path(out_dir)
    cfg = asdict(config)
    cfg["alpha_grid"] = list(config.alpha_grid)
    jobs = [(synth.to_dict(), i, m, cfg, str(out_dir))
            for i in range(synth.num_datasets) for m in methods]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_safe_job, jobs))
    else:
        results = [_safe_job(j) for j in jobs]
    rows = summarize(results, methods)
    summary = {"synth_config": synth.to_dict(), "train_config": cfg, "methods": rows}
    write_json(out_dir / "summary.json", summary)
    table = format_table({display_name(m): r for m, r in rows.items()})
    (out_dir / "summary.txt").write_text(table + "\n", encoding="utf-8")
    return summary
