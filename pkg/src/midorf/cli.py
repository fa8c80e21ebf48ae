"""Command-line interface: ``midorf {generate,train,predict,evaluate,benchmark}``.

Exit codes: 0 success, 1 file system error, 2 usage error, 3 invalid
data or file contents, 4 numerical failure during training, 5 optimizer
stopped before convergence (``train --strict`` only; the model is still
saved).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .baselines import TRAINERS
from .core import DataValidationError, check_dataset
from .io import (
    MANIFEST,
    FormatError,
    format_report,
    format_table,
    load_model,
    read_dataset,
    read_json,
    read_predictions,
    save_model,
    worker_count,
    write_dataset,
    write_json,
    write_predictions,
    display_name,
)
from .learning import DEFAULT_ALPHA_GRID, NumericalError, TrainConfig, select_alpha
from .metrics import evaluate
from .models import METHODS, predict_dataset
from .synthgen import SynthConfig, generate_dataset

log = logging.getLogger("midorf")

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL, EXIT_NOT_CONVERGED = 0, 1, 2, 3, 4, 5


class UsageError(Exception):
    pass


def _synth_config(args) -> SynthConfig:
    overrides = {}
    if args.config:
        overrides = read_json(args.config)
        if not isinstance(overrides, dict):
            raise UsageError("--config must hold a JSON object")
    overrides["seed"] = args.seed
    if getattr(args, "num_datasets", None) is not None:
        overrides["num_datasets"] = args.num_datasets
    try:
        return SynthConfig.from_dict(overrides)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from None


def cmd_generate(args) -> int:
    cfg = _synth_config(args)
    out = Path(args.out)
    truths = []
    for i in range(cfg.num_datasets):
        train, test, val, truth = generate_dataset(cfg, i)
        for name, ds in (("train", train), ("test", test), ("val", val)):
            write_dataset(out / f"dataset-{i:02d}" / f"{name}.jsonl", ds)
        truths.append(truth.to_dict())
    write_json(out / MANIFEST, {"config": cfg.to_dict(), "generators": truths})
    print(f"wrote {cfg.num_datasets} datasets to {out}")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    kw = {"seed": args.seed, "max_iterations": args.max_iterations,
          "gradient_tolerance": args.gradient_tolerance}
    if args.alpha is not None:
        kw["alpha"] = args.alpha
    if args.alpha_grid:
        kw["alpha_grid"] = tuple(args.alpha_grid)
    try:
        return TrainConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_train(args) -> int:
    config = _train_config(args)
    train = check_dataset(read_dataset(args.train, args.levels))
    trainer = TRAINERS[args.method]
    if args.alpha_grid:
        if not args.val:
            raise UsageError("--alpha-grid needs --val")
        val = check_dataset(read_dataset(args.val, train.scale.num_levels))
        alpha, model = select_alpha(train, val, config, trainer=trainer)
        log.info("selected alpha=%g", alpha)
    else:
        model = trainer(train, config)
    save_model(args.out, model)
    if model.trace is not None:
        write_json(str(args.out) + ".trace.json", model.trace.to_dict())
    print(f"saved {args.method} model (alpha={model.train_meta.get('alpha')}) to {args.out}")
    if model.trace is not None and not model.trace.converged:
        print(f"warning: optimizer did not converge: {model.trace.message}", file=sys.stderr)
        if args.strict:
            return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_model(args.model)
    data = read_dataset(args.data, model.num_levels)
    report = check_dataset(data)
    preds = predict_dataset(model, report)
    write_predictions(args.out, preds, args.level)
    print(f"wrote {len(preds)} predictions to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    data = check_dataset(read_dataset(args.data, args.levels))
    preds = read_predictions(args.pred)
    report = evaluate(preds, data)
    if args.out:
        write_json(args.out, report.to_dict())
    print(format_report(report))
    return EXIT_OK


def cmd_benchmark(args) -> int:
    from .benchmark import run_benchmark

    cfg = _synth_config(args)
    tc = TrainConfig(seed=args.seed, max_iterations=args.max_iterations,
                     alpha_grid=tuple(args.alpha_grid or DEFAULT_ALPHA_GRID))
    summary = run_benchmark(args.out, cfg, tuple(args.methods), tc, workers=worker_count())
    rows = summary["methods"]
    print(format_table({display_name(m): r for m, r in rows.items()}))
    for m, r in rows.items():
        for f in r["failures"]:
            print(f"failed: {m} on dataset {f['dataset']}: {f['error']}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="midorf", description="Multi-instance dynamic ordinal random fields.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write synthetic train/test/val splits")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--config", help="JSON object overriding generator settings")
    g.add_argument("--num-datasets", type=int)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="fit a model")
    t.add_argument("--method", required=True, choices=METHODS)
    t.add_argument("--train", required=True)
    t.add_argument("--val")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--levels", type=int, help="number of ordinal levels (default: manifest or data)")
    a = t.add_mutually_exclusive_group()
    a.add_argument("--alpha", type=float)
    a.add_argument("--alpha-grid", type=float, nargs="+")
    t.add_argument("--max-iterations", type=int, default=500)
    t.add_argument("--gradient-tolerance", type=float, default=1e-5)
    t.add_argument("--strict", action="store_true",
                   help="exit with status 5 if the optimizer stops before converging")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="predict bag and instance labels")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--level", choices=("frame", "sequence", "both"), default="both")
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="score predictions against labelled data")
    e.add_argument("--pred", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out")
    e.add_argument("--levels", type=int)
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("benchmark", help="all methods on the synthetic suite")
    b.add_argument("--out", required=True)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--methods", nargs="+", choices=METHODS, default=list(METHODS))
    b.add_argument("--config")
    b.add_argument("--num-datasets", type=int)
    b.add_argument("--alpha-grid", type=float, nargs="+")
    b.add_argument("--max-iterations", type=int, default=500)
    b.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataValidationError, FormatError, json.JSONDecodeError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except KeyError as exc:
        print(f"invalid input: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
