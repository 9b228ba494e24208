"""Command line interface.

Subcommands: synth (write a blob CSV), train (one full run into a run
directory), sweep (grid of runs with a ranked summary), variance-check
(Monte Carlo check of the averaging variance formula).

Exit codes: 0 success, 2 usage or validation errors, 3 failed data
preconditions (a class too small to shard or split), 4 numerical
divergence during training. variance-check additionally exits 1 when
the estimate misses its tolerance band.

All file output is deterministic for a given configuration: floats are
written with repr precision and timings never enter the artifacts.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from .aggregate import WeightingConfig
from .data import (
    Dataset,
    InsufficientClassDataError,
    SplitSpec,
    gen_synthetic,
    load_csv,
    save_csv,
    stratified_split,
)
from .metrics import Evaluation
from .models import DivergenceError, MLPConfig, TrainConfig, save_pv
from .orchestrate import (
    METHODS,
    RunConfig,
    RunLog,
    SweepSpec,
    decision_grid,
    run,
    summarize_sweep,
    sweep,
)
from .theory import (
    CorrelatedErrorSpec,
    mc_tolerance,
    mc_variance_uniform,
    mc_variance_weighted,
)

_TRAIN_DEFAULTS: dict = {
    "label_column": "label",
    "test_data": None,
    "test_frac": 0.25,
    "val_frac": 0.1,
    "method": "dua-d2c",
    "subsets": 3,
    "local_epochs": 1,
    "global_epochs": 30,
    "batch": 16,
    "lr": 0.01,
    "optimizer": "adam",
    "dropout": 0.0,
    "hidden": [100, 100, 100],
    "lambda": 0.7,
    "cmax": 10.0,
    "delta_e": 1e-8,
    "eps_s": 1e-8,
    "seed": 0,
    "grid_res": 100,
}


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated floats, got {text!r}"
        )


def _add_train_flags(sub: argparse.ArgumentParser, sweep_mode: bool) -> None:
    sub.add_argument("--data", help="training CSV (headered)")
    sub.add_argument("--label-column", dest="label_column")
    sub.add_argument("--test-data", dest="test_data", help="separate test CSV")
    sub.add_argument("--test-frac", dest="test_frac", type=float)
    sub.add_argument("--val-frac", dest="val_frac", type=float)
    sub.add_argument("--method", choices=["traditional", "d2c", "dua-d2c"])
    sub.add_argument("--global-epochs", dest="global_epochs", type=int)
    sub.add_argument("--batch", type=int)
    sub.add_argument("--lr", type=float)
    sub.add_argument("--optimizer", choices=["sgd", "adam"])
    sub.add_argument("--dropout", type=float)
    sub.add_argument("--hidden", type=_int_list, help="hidden widths, e.g. 100,100,100")
    sub.add_argument("--delta-e", dest="delta_e", type=float)
    sub.add_argument("--eps-s", dest="eps_s", type=float)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--workers", type=int, help="worker threads (default: CPUs)")
    sub.add_argument("--out-dir", dest="out_dir", required=True)
    if sweep_mode:
        sub.add_argument("--subsets", type=_int_list, help="comma list of N values")
        sub.add_argument(
            "--local-epochs", dest="local_epochs", type=_int_list,
            help="comma list of E values",
        )
        sub.add_argument(
            "--lambda", dest="lambda_", type=_float_list,
            help="comma list of lambda values",
        )
        sub.add_argument(
            "--cmax", type=_float_list, help="comma list of c_max values"
        )
        sub.add_argument("--reps", type=int, default=1)
    else:
        sub.add_argument("--subsets", type=int, help="number of shards N")
        sub.add_argument("--local-epochs", dest="local_epochs", type=int)
        sub.add_argument("--lambda", dest="lambda_", type=float)
        sub.add_argument("--cmax", type=float)
        sub.add_argument(
            "--grid-res", dest="grid_res", type=int,
            help="decision grid resolution for 2-feature data, 0 to skip",
        )
        sub.add_argument("--config", help="config.json from a previous run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="d2c",
        description="Shard-and-merge training with uncertainty-aware aggregation.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    synth = subs.add_parser("synth", help="generate a synthetic blob CSV")
    synth.add_argument("--n", type=int, default=240)
    synth.add_argument("--dims", type=int, default=2)
    synth.add_argument("--classes", type=int, default=2)
    synth.add_argument("--sep", type=float, default=1.0)
    synth.add_argument("--noise", type=float, default=0.0)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True)
    synth.set_defaults(func=cmd_synth)

    train = subs.add_parser("train", help="run one training configuration")
    _add_train_flags(train, sweep_mode=False)
    train.set_defaults(func=cmd_train)

    swp = subs.add_parser("sweep", help="grid over N, E, lambda, c_max")
    _add_train_flags(swp, sweep_mode=True)
    swp.set_defaults(func=cmd_sweep)

    vc = subs.add_parser("variance-check", help="Monte Carlo averaging-variance check")
    vc.add_argument("--k", type=int, required=True)
    vc.add_argument("--s", type=float, default=1.0)
    vc.add_argument("--c", type=float, default=0.0)
    vc.add_argument("--trials", type=int, default=200000)
    vc.add_argument("--seed", type=int, default=0)
    vc.add_argument("--alpha", type=_float_list, help="optional weights, comma list")
    vc.set_defaults(func=cmd_variance_check)

    return parser


def cmd_synth(args: argparse.Namespace) -> int:
    ds = gen_synthetic(
        n=args.n,
        d=args.dims,
        num_classes=args.classes,
        class_sep=args.sep,
        noise_frac=args.noise,
        seed=args.seed,
    )
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    save_csv(ds, args.out)
    print(f"wrote {ds.n} rows, {ds.d} features, {ds.num_classes} classes to {args.out}")
    return 0


def _resolve_train_settings(args: argparse.Namespace) -> dict:
    """Merge explicit flags over an optional --config over the defaults."""
    recorded: dict = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            recorded = json.load(fh)
    settings = {}
    for key, default in _TRAIN_DEFAULTS.items():
        attr = "lambda_" if key == "lambda" else key
        explicit = getattr(args, attr, None)
        if explicit is not None:
            settings[key] = explicit
        elif key in recorded:
            settings[key] = recorded[key]
        else:
            settings[key] = default
    data = args.data if args.data is not None else recorded.get("data")
    if not data:
        raise ValueError("--data is required (or a --config that records it)")
    settings["data"] = data
    return settings


def _build_run_config(settings: dict, d: int, num_classes: int) -> RunConfig:
    hidden = [int(h) for h in settings["hidden"]]
    model = MLPConfig(
        layer_sizes=(d, *hidden, num_classes),
        dropout_p=settings["dropout"],
        seed=settings["seed"],
    )
    train_cfg = TrainConfig(
        batch_size=settings["batch"],
        local_epochs=settings["local_epochs"],
        learning_rate=settings["lr"],
        optimizer=settings["optimizer"],
        seed=settings["seed"],
    )
    weighting = WeightingConfig(
        num_classes=num_classes,
        lambda_=settings["lambda"],
        c_max=settings["cmax"],
        delta_e=settings["delta_e"],
        eps_s=settings["eps_s"],
    )
    return RunConfig(
        method=settings["method"].replace("-", "_"),
        num_subsets=settings["subsets"],
        global_epochs=settings["global_epochs"],
        model=model,
        train=train_cfg,
        weighting=weighting,
        master_seed=settings["seed"],
    )


def _load_splits(settings: dict) -> tuple[Dataset, Dataset, Dataset]:
    full = load_csv(settings["data"], settings["label_column"])
    if settings["test_data"]:
        test_ds = load_csv(settings["test_data"], settings["label_column"])
        rest = full
    else:
        rest, test_ds = stratified_split(
            full, SplitSpec(settings["test_frac"], seed=settings["seed"])
        )
    train_ds, val_ds = stratified_split(
        rest, SplitSpec(settings["val_frac"], seed=settings["seed"] + 1)
    )
    return train_ds, val_ds, test_ds


def _write_run_dir(
    out_dir: str,
    settings: dict,
    cfg: RunConfig,
    theta,
    log: RunLog,
    train_ds: Dataset,
) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(settings, fh, indent=2, sort_keys=True)
        fh.write("\n")

    with open(os.path.join(out_dir, "curves.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["global_epoch", "central_val_loss", "central_val_acc", "mean_edge_train_loss"]
        )
        for ep in log.epochs:
            writer.writerow(
                [
                    ep.global_epoch,
                    repr(ep.central_val_loss),
                    repr(ep.central_val_acc),
                    repr(float(ep.edge_train_loss.mean())),
                ]
            )

    with open(os.path.join(out_dir, "alphas.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "global_epoch",
                "edge_id",
                "val_accuracy",
                "mean_entropy",
                "confidence",
                "score",
                "alpha",
            ]
        )
        for ep in log.epochs:
            for i in range(len(ep.weights)):
                writer.writerow(
                    [
                        ep.global_epoch,
                        i,
                        repr(float(ep.edge_val_accuracy[i])),
                        repr(float(ep.edge_val_entropy[i])),
                        repr(float(ep.weights.confidence[i])),
                        repr(float(ep.weights.score[i])),
                        repr(float(ep.weights.alpha[i])),
                    ]
                )

    save_pv(theta, os.path.join(out_dir, "final.pv"))

    with open(os.path.join(out_dir, "evaluation.json"), "w", encoding="utf-8") as fh:
        json.dump(log.final_eval.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    if settings.get("grid_res", 0) and cfg.model.layer_sizes[0] == 2:
        res = int(settings["grid_res"])
        feats = train_ds.features
        lo = feats.min(axis=0)
        hi = feats.max(axis=0)
        span = np.where(hi - lo > 0, hi - lo, 1.0)
        lo = lo - 0.05 * span
        hi = hi + 0.05 * span
        grid = decision_grid(theta, cfg.model, (lo[0], hi[0], lo[1], hi[1]), res)
        xs = np.linspace(lo[0], hi[0], res)
        ys = np.linspace(lo[1], hi[1], res)
        with open(os.path.join(out_dir, "grid.csv"), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "y", "class"])
            for i in range(res):
                for j in range(res):
                    writer.writerow([repr(float(xs[j])), repr(float(ys[i])), int(grid[i, j])])


def cmd_train(args: argparse.Namespace) -> int:
    settings = _resolve_train_settings(args)
    train_ds, val_ds, test_ds = _load_splits(settings)
    cfg = _build_run_config(settings, train_ds.d, train_ds.num_classes)
    t0 = time.perf_counter()
    theta, log = run(cfg, train_ds, val_ds, test_ds, workers=args.workers)
    _write_run_dir(args.out_dir, settings, cfg, theta, log, train_ds)
    elapsed = time.perf_counter() - t0
    print(
        f"{cfg.method} N={cfg.num_subsets}: "
        f"val acc {log.epochs[-1].central_val_acc:.4f}, "
        f"test acc {log.final_eval.accuracy:.4f}, "
        f"test log loss {log.final_eval.log_loss:.4f} "
        f"({elapsed:.1f}s, {len(log.epochs)} global epochs)"
    )
    return 0


_SWEEP_ROW_FIELDS = [
    "subsets", "local_epochs", "lambda", "c_max", "rep", "seed", "status", "reason",
    "val_accuracy", "val_log_loss", "accuracy", "macro_f1", "log_loss", "mcc",
    "cohen_kappa", "roc_auc_ovr", "mean_entropy",
]


def _csv_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def cmd_sweep(args: argparse.Namespace) -> int:
    settings = _resolve_train_settings(args)
    # grids fall back to one-point grids at the base values
    subsets = args.subsets if args.subsets is not None else [settings["subsets"]]
    local_epochs = (
        args.local_epochs if args.local_epochs is not None else [settings["local_epochs"]]
    )
    lambdas = args.lambda_ if args.lambda_ is not None else [settings["lambda"]]
    cmaxes = args.cmax if args.cmax is not None else [settings["cmax"]]
    if not (subsets and local_epochs and lambdas and cmaxes):
        raise ValueError("empty sweep grid")
    settings["subsets"] = subsets[0]
    settings["local_epochs"] = local_epochs[0]
    settings["lambda"] = lambdas[0]
    settings["cmax"] = cmaxes[0]
    train_ds, val_ds, test_ds = _load_splits(settings)
    base = _build_run_config(settings, train_ds.d, train_ds.num_classes)
    spec = SweepSpec(
        base=base,
        subsets=tuple(subsets),
        local_epochs=tuple(local_epochs),
        lambdas=tuple(lambdas),
        c_maxes=tuple(cmaxes),
        reps=args.reps,
    )
    t0 = time.perf_counter()
    rows = sweep(spec, train_ds, val_ds, test_ds, workers=args.workers)
    summary = summarize_sweep(rows)

    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "sweep.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_SWEEP_ROW_FIELDS)
        for row in rows:
            writer.writerow([_csv_cell(row[f]) for f in _SWEEP_ROW_FIELDS])
    if summary:
        fields = list(summary[0].keys())
        fields.remove("rank")
        fields = ["rank"] + fields
        with open(
            os.path.join(args.out_dir, "sweep_summary.csv"), "w", newline="", encoding="utf-8"
        ) as fh:
            writer = csv.writer(fh)
            writer.writerow(fields)
            for entry in summary:
                writer.writerow([_csv_cell(entry[f]) for f in fields])
    n_ok = sum(1 for r in rows if r["status"] == "ok")
    print(
        f"swept {len(summary)} cells x {args.reps} reps: {n_ok} runs ok, "
        f"{len(rows) - n_ok} skipped ({time.perf_counter() - t0:.1f}s)"
    )
    return 0


def cmd_variance_check(args: argparse.Namespace) -> int:
    spec = CorrelatedErrorSpec(
        k=args.k, s=args.s, c=args.c, trials=args.trials, seed=args.seed
    )
    if args.alpha is not None:
        alpha = np.asarray(args.alpha, dtype=np.float64)
        estimated, theoretical = mc_variance_weighted(spec, alpha)
        alpha_out = [float(a) for a in alpha]
    else:
        estimated, theoretical = mc_variance_uniform(spec)
        alpha_out = None
    tolerance = mc_tolerance(estimated, spec.trials)
    passed = abs(estimated - theoretical) <= tolerance
    print(
        json.dumps(
            {
                "k": spec.k,
                "s": spec.s,
                "c": spec.c,
                "alpha": alpha_out,
                "theoretical": theoretical,
                "estimated": estimated,
                "tolerance": tolerance,
                "pass": passed,
            }
        )
    )
    return 0 if passed else 1


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InsufficientClassDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
