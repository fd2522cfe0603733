"""Command-line surface.

Subcommands wrap the library one-to-one: data synthesis, fitting (flat and
stick-breaking), model-order selection, prediction, classification, class
discovery, and the two benchmark protocols.  Every run writes exactly one
manifest (command, config, seed, timestamps, paths); all other outputs are
deterministic under ``--seed``.  Errors leave as one JSON object on stderr
with exit code 1.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .data import Dataset, snap_to_grid
from .dp import DpConfig, fit_dp
from .em import FitConfig, fit
from .inference import (
    bic_select,
    class_discovery,
    classify_dataset,
    fit_classifier,
    predict_task,
)
from .io import CsvFormatError, export_csv, ingest_csv
from .kernels import RbfParams
from .linalg import NumericalError
from .serialization import (
    load_classifier,
    load_model,
    save_classifier,
    save_model,
)
from .synthetic import (
    ClassSynthConfig,
    SynthConfig,
    generate_classification_data,
    generate_regression_data,
    run_classification_benchmark,
    run_regression_benchmark,
)

__all__ = ["main"]


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _write_json(doc: dict, path: str | None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _write_manifest(
    command: str,
    args: argparse.Namespace,
    inputs: list[str],
    outputs: list[str],
    started: str,
) -> None:
    config = {
        k: v
        for k, v in sorted(vars(args).items())
        if k not in ("func", "manifest") and not k.startswith("_")
    }
    manifest = {
        "command": command,
        "config": config,
        "seed": getattr(args, "seed", None),
        "started_at": started,
        "finished_at": _utc_now(),
        "inputs": sorted(set(inputs)),
        "outputs": sorted(set(outputs)),
        "library_version": __version__,
    }
    path = args.manifest
    if path is None:
        anchor = outputs[0] if outputs else f"gmtgp-{command}"
        path = f"{anchor}.manifest.json"
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_table(path: str, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="rng seed")
    p.add_argument("--threads", type=int, default=None, help="worker cap (overrides GMTGP_THREADS)")
    p.add_argument("--manifest", default=None, help="manifest path override")
    p.add_argument("--metrics", default=None, help="metrics JSON path (default stdout)")


def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--shift-grid", type=int, default=None, help="shift grid size (default: snap resolution or 1)")
    p.add_argument("--kernel", choices=("rbf", "empirical"), default="rbf")
    p.add_argument("--group-amplitude", type=float, default=1.0)
    p.add_argument("--group-s-den", type=float, default=0.04)


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="observations CSV (task_id,t,y[,label])")
    p.add_argument("--period", type=float, default=1.0)
    p.add_argument("--snap", type=int, default=None, help="snap times to a uniform grid of this size")


def _load_dataset(args: argparse.Namespace) -> Dataset:
    dataset = ingest_csv(args.data, period=args.period)
    if args.snap is not None:
        dataset = snap_to_grid(dataset, args.snap)
    return dataset


def _fit_config(args: argparse.Namespace, n_clusters: int) -> FitConfig:
    return FitConfig(
        n_clusters=n_clusters,
        restarts=args.restarts,
        tol=args.tol,
        max_iter=args.max_iter,
        seed=args.seed,
        shift_grid_size=args.shift_grid,
        kernel_mode=args.kernel,
        group_kernel=RbfParams(args.group_amplitude, args.group_s_den),
    )


# ---------------------------------------------------------------------------
# commands


def _cmd_synth(args: argparse.Namespace) -> int:
    started = _utc_now()
    outputs = [args.out]
    if args.mode == "regression":
        cfg = SynthConfig(
            n_tasks=args.tasks,
            n_groups=args.groups,
            samples_per_task=args.n,
            seed=args.seed,
        )
        dataset, truth = generate_regression_data(cfg)
        export_csv(dataset, args.out)
        truth_doc = {
            "period": cfg.period,
            "curves": truth["curves"].tolist(),
            "assignments": truth["assignments"].tolist(),
            "task_truth": truth["task_truth"].tolist(),
            "grid_internal": truth["grid_internal"].tolist(),
        }
    else:
        cfg = ClassSynthConfig(
            n_classes=args.groups,
            samples_per_task=args.n,
            n_train_per_class=args.tasks,
            n_test_per_class=args.tasks,
            seed=args.seed,
        )
        train, test, info = generate_classification_data(cfg)
        export_csv(train, args.out)
        if not args.test_out:
            raise ValueError("--test-out is required in classification mode")
        export_csv(test, args.test_out)
        outputs.append(args.test_out)
        truth_doc = {"period": 1.0, "curves": info["curves"].tolist()}
    if args.truth:
        _write_json(truth_doc, args.truth)
        outputs.append(args.truth)
    _write_manifest("synth", args, [], outputs, started)
    return 0


def _cmd_fit(args: argparse.Namespace) -> int:
    started = _utc_now()
    dataset = _load_dataset(args)
    model, report = fit(dataset, _fit_config(args, args.k))
    save_model(model, args.out)
    outputs = [args.out]
    if args.metrics:
        outputs.append(args.metrics)
    _write_json(report, args.metrics)
    _write_manifest("fit", args, [args.data], outputs, started)
    return 0


def _cmd_fit_dp(args: argparse.Namespace) -> int:
    started = _utc_now()
    dataset = _load_dataset(args)
    config = DpConfig(
        n_clusters=args.truncation,
        restarts=args.restarts,
        tol=args.tol,
        max_iter=args.max_iter,
        seed=args.seed,
        shift_grid_size=args.shift_grid,
        kernel_mode=args.kernel,
        group_kernel=RbfParams(args.group_amplitude, args.group_s_den),
        truncation=args.truncation,
        concentration=args.concentration,
    )
    model, report = fit_dp(dataset, config)
    save_model(model, args.out)
    outputs = [args.out]
    if args.metrics:
        outputs.append(args.metrics)
    _write_json(report, args.metrics)
    _write_manifest("fit-dp", args, [args.data], outputs, started)
    return 0


def _cmd_select_k(args: argparse.Namespace) -> int:
    started = _utc_now()
    dataset = _load_dataset(args)
    if args.k_min < 1 or args.k_max < args.k_min:
        raise ValueError("need 1 <= k-min <= k-max")
    k_values = list(range(args.k_min, args.k_max + 1))
    best_k, table, model = bic_select(dataset, k_values, _fit_config(args, args.k_min))
    save_model(model, args.out)
    outputs = [args.out]
    metrics = {"best_k": best_k, "table": {str(k): v for k, v in table.items()}}
    if args.metrics:
        outputs.append(args.metrics)
    _write_json(metrics, args.metrics)
    if args.table_out:
        rows = [[k, table[k]["bic"]] for k in sorted(table)]
        _write_table(args.table_out, ["k", "bic"], rows)
        outputs.append(args.table_out)
    _write_manifest("select-k", args, [args.data], outputs, started)
    return 0


def _cmd_predict(args: argparse.Namespace) -> int:
    started = _utc_now()
    model = load_model(args.model)
    dataset = _load_dataset(args)
    if abs(dataset.period - model.period) > 1e-9 * max(1.0, model.period):
        raise ValueError(
            f"--period {dataset.period!r} does not match the model period {model.period!r}"
        )
    if args.times:
        times = np.array([float(v) for v in args.times.split(",")])
    else:
        times = dataset.grid.points * model.period
    tasks = [args.task] if args.task else dataset.task_ids
    rows = []
    from .em import e_step

    state = e_step(model, dataset)
    for task_id in tasks:
        pred = predict_task(model, dataset, task_id, times, estep=state)
        for t, v in zip(times.tolist(), pred.tolist()):
            rows.append([task_id, repr(t), repr(v)])
    _write_table(args.out, ["task_id", "t", "prediction"], rows)
    outputs = [args.out]
    _write_manifest("predict", args, [args.model, args.data], outputs, started)
    return 0


def _cmd_classify(args: argparse.Namespace) -> int:
    started = _utc_now()
    if not args.model and not args.train:
        raise ValueError("either --model or --train is required")
    inputs = [args.data]
    if args.model:
        bundle = load_classifier(args.model)
        inputs.append(args.model)
    else:
        train = ingest_csv(args.train, period=args.period)
        if args.snap is not None:
            train = snap_to_grid(train, args.snap)
        bundle, _ = fit_classifier(train, _fit_config(args, args.k))
        inputs.append(args.train)
    dataset = _load_dataset(args)
    labels = classify_dataset(bundle, dataset)
    rows = [[tid, lab] for tid, lab in zip(dataset.task_ids, labels)]
    _write_table(args.out, ["task_id", "label"], rows)
    outputs = [args.out]
    metrics: dict = {"n_classified": len(labels)}
    truth = dataset.labels()
    if all(t is not None for t in truth):
        metrics["accuracy"] = sum(p == t for p, t in zip(labels, truth)) / len(labels)
    if args.save_model:
        save_classifier(bundle, args.save_model)
        outputs.append(args.save_model)
    if args.metrics:
        outputs.append(args.metrics)
    _write_json(metrics, args.metrics)
    _write_manifest("classify", args, inputs, outputs, started)
    return 0


def _cmd_discover(args: argparse.Namespace) -> int:
    started = _utc_now()
    reference = ingest_csv(args.train, period=args.period)
    dataset = ingest_csv(args.data, period=args.period)
    if args.snap is not None:
        reference = snap_to_grid(reference, args.snap)
        dataset = snap_to_grid(dataset, args.snap)
    if args.dp:
        config: FitConfig = DpConfig(
            n_clusters=args.truncation,
            restarts=args.restarts,
            tol=args.tol,
            max_iter=args.max_iter,
            seed=args.seed,
            shift_grid_size=args.shift_grid,
            kernel_mode=args.kernel,
            group_kernel=RbfParams(args.group_amplitude, args.group_s_den),
            truncation=args.truncation,
            concentration=args.concentration,
        )
    else:
        config = _fit_config(args, args.k)
    result = class_discovery(reference, dataset, config)
    rows = [[tid, lab] for tid, lab in zip(dataset.task_ids, result["labels"])]
    _write_table(args.out, ["task_id", "label"], rows)
    outputs = [args.out]
    metrics = {
        "cluster_to_label": {str(k): v for k, v in result["cluster_to_label"].items()},
    }
    if "accuracy" in result:
        metrics["accuracy"] = result["accuracy"]
    if args.metrics:
        outputs.append(args.metrics)
    _write_json(metrics, args.metrics)
    _write_manifest("discover", args, [args.train, args.data], outputs, started)
    return 0


def _cmd_bench_regression(args: argparse.Namespace) -> int:
    started = _utc_now()
    n_values = tuple(int(v) for v in args.n_values.split(","))
    methods = tuple(args.methods.split(","))
    result = run_regression_benchmark(
        n_values=n_values,
        n_trials=args.trials,
        methods=methods,
        seed=args.seed,
        restarts=args.restarts,
        max_iter=args.max_iter,
        tol=args.tol,
    )
    outputs = []
    if args.metrics:
        outputs.append(args.metrics)
    _write_json(result, args.metrics)
    if args.table_out:
        rows = []
        for m in methods:
            for n in n_values:
                for trial, v in enumerate(result["rmse"][m][str(n)]):
                    rows.append([m, n, trial, repr(v)])
        _write_table(args.table_out, ["method", "n", "trial", "rmse"], rows)
        outputs.append(args.table_out)
    _write_manifest("bench-regression", args, [], outputs, started)
    return 0


def _cmd_bench_classify(args: argparse.Namespace) -> int:
    started = _utc_now()
    result = run_classification_benchmark(
        seed=args.seed,
        n_seeds=args.seeds,
        discovery=not args.no_discovery,
        k_discovery=args.k_discovery,
        restarts=args.restarts,
        max_iter=args.max_iter,
        tol=args.tol,
    )
    outputs = []
    if args.metrics:
        outputs.append(args.metrics)
    _write_json(result, args.metrics)
    if args.table_out:
        rows = []
        for i, entry in enumerate(result["runs"]):
            rows.append(
                [
                    entry["seed"],
                    repr(entry["classify_accuracy"]),
                    repr(entry.get("discovery_accuracy", "")),
                ]
            )
        _write_table(
            args.table_out, ["seed", "classify_accuracy", "discovery_accuracy"], rows
        )
        outputs.append(args.table_out)
    _write_manifest("bench-classify", args, [], outputs, started)
    return 0


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmtgp",
        description="Grouped mixed-effect GP mixtures with phase shifts",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic benchmark data")
    p.add_argument("--mode", choices=("regression", "classification"), default="regression")
    p.add_argument("--n", type=int, default=5, help="samples per task")
    p.add_argument("--tasks", type=int, default=50, help="tasks (regression) or tasks per class per split")
    p.add_argument("--groups", type=int, default=3)
    p.add_argument("--out", required=True, help="dataset CSV path")
    p.add_argument("--test-out", default=None, help="test CSV path (classification mode)")
    p.add_argument("--truth", default=None, help="ground-truth JSON path")
    _add_common(p)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("fit", help="fit the mixture")
    _add_data_flags(p)
    p.add_argument("--k", type=int, default=3)
    _add_fit_flags(p)
    p.add_argument("--out", required=True, help="model JSON path")
    _add_common(p)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("fit-dp", help="fit the stick-breaking mixture")
    _add_data_flags(p)
    p.add_argument("--truncation", type=int, default=10)
    p.add_argument("--concentration", type=float, default=1.0)
    _add_fit_flags(p)
    p.add_argument("--out", required=True, help="model JSON path")
    _add_common(p)
    p.set_defaults(func=_cmd_fit_dp)

    p = sub.add_parser("select-k", help="BIC model-order selection")
    _add_data_flags(p)
    p.add_argument("--k-min", type=int, default=1)
    p.add_argument("--k-max", type=int, default=6)
    _add_fit_flags(p)
    p.add_argument("--out", required=True, help="best model JSON path")
    p.add_argument("--table-out", default=None, help="per-k BIC CSV path")
    _add_common(p)
    p.set_defaults(func=_cmd_select_k)

    p = sub.add_parser("predict", help="per-task regression prediction")
    _add_data_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--task", default=None, help="task id (default: all tasks)")
    p.add_argument("--times", default=None, help="comma-separated times in original units")
    p.add_argument("--out", required=True, help="prediction CSV path")
    _add_common(p)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("classify", help="label series with per-label models")
    _add_data_flags(p)
    p.add_argument("--model", default=None, help="classifier bundle JSON")
    p.add_argument("--train", default=None, help="labeled training CSV (fits the bundle)")
    p.add_argument("--k", type=int, default=1, help="clusters per label when training")
    _add_fit_flags(p)
    p.add_argument("--out", required=True, help="labels CSV path")
    p.add_argument("--save-model", default=None, help="write the fitted bundle here")
    _add_common(p)
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("discover", help="cluster unlabeled data and name clusters")
    _add_data_flags(p)
    p.add_argument("--train", required=True, help="labeled reference CSV")
    p.add_argument("--k", type=int, default=9)
    p.add_argument("--dp", action="store_true", help="use the stick-breaking fit")
    p.add_argument("--truncation", type=int, default=10)
    p.add_argument("--concentration", type=float, default=1.0)
    _add_fit_flags(p)
    p.add_argument("--out", required=True, help="labels CSV path")
    _add_common(p)
    p.set_defaults(func=_cmd_discover)

    p = sub.add_parser("bench-regression", help="RMSE benchmark across methods")
    p.add_argument("--n-values", default="5", help="comma-separated samples-per-task values")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--methods", default="st,scmt,gmt,dp,cgmt")
    p.add_argument("--restarts", type=int, default=2)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=60)
    p.add_argument("--table-out", default=None, help="plot-ready CSV path")
    _add_common(p)
    p.set_defaults(func=_cmd_bench_regression)

    p = sub.add_parser("bench-classify", help="classification benchmark")
    p.add_argument("--seeds", type=int, default=1, help="benchmark repetitions")
    p.add_argument("--k-discovery", type=int, default=9)
    p.add_argument("--no-discovery", action="store_true")
    p.add_argument("--restarts", type=int, default=2)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=60)
    p.add_argument("--table-out", default=None, help="plot-ready CSV path")
    _add_common(p)
    p.set_defaults(func=_cmd_bench_classify)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if getattr(args, "threads", None) is not None:
        if args.threads < 1:
            _emit_error(ValueError("--threads must be >= 1"))
            return 1
        os.environ["GMTGP_THREADS"] = str(args.threads)
    try:
        return args.func(args)
    except (
        ValueError,
        KeyError,
        OSError,
        CsvFormatError,
        NumericalError,
        RuntimeError,
    ) as exc:
        _emit_error(exc)
        return 1


def _emit_error(exc: Exception) -> None:
    doc = {"error": {"type": type(exc).__name__, "message": str(exc)}}
    sys.stderr.write(json.dumps(doc) + "\n")


if __name__ == "__main__":
    sys.exit(main())
