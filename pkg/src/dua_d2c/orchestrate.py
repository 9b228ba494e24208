"""Global training loop: broadcast, train edges in parallel, merge, repeat.

One run shards the training data once, then for every global epoch
trains a copy of the central parameters on each shard, scores each copy
on the shared validation set, and merges the copies with weights chosen
by the method:

  traditional  single subset, the loop degenerates to plain training
  d2c          uniform weights over the subsets
  dua_d2c      accuracy/confidence weights from the aggregate module

Determinism does not depend on scheduling: edge i in global epoch g
always draws from the stream spawned as (master_seed, (g, i)), results
are merged in edge order at a single barrier, and kernels are
bit-reproducible per backend. The worker-thread count (argument, or the
D2C_WORKERS environment variable, defaulting to the logical CPU count)
therefore never changes any numerical output.
"""

from __future__ import annotations

import itertools
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .aggregate import (
    AggregationWeights,
    WeightingConfig,
    aggregate_params,
    dua_weights,
    uniform_weights,
)
from .data import Dataset, InsufficientClassDataError, ShardSet, shard
from .metrics import Evaluation, evaluate, log_loss
from .models import (
    DivergenceError,
    MLPConfig,
    ParamVector,
    TrainConfig,
    forward,
    init_params,
    train_local,
)

__all__ = [
    "METHODS",
    "ENV_WORKERS",
    "RunConfig",
    "EpochLog",
    "RunLog",
    "SweepSpec",
    "run",
    "run_on_shards",
    "sweep",
    "summarize_sweep",
    "decision_grid",
]

METHODS = ("traditional", "d2c", "dua_d2c")
ENV_WORKERS = "D2C_WORKERS"


@dataclass(frozen=True)
class RunConfig:
    """Everything one training run depends on, seeds included."""

    method: str
    num_subsets: int
    global_epochs: int
    model: MLPConfig
    train: TrainConfig
    weighting: WeightingConfig
    master_seed: int = 0

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.num_subsets < 1:
            raise ValueError(f"num_subsets must be >= 1, got {self.num_subsets}")
        if self.method == "traditional" and self.num_subsets != 1:
            raise ValueError("traditional training uses exactly one subset")
        if self.global_epochs < 1:
            raise ValueError(f"global_epochs must be >= 1, got {self.global_epochs}")
        if self.weighting.num_classes != self.model.num_classes:
            raise ValueError(
                "weighting and model disagree on the number of classes"
            )


@dataclass(frozen=True)
class EpochLog:
    """Everything recorded at one aggregation barrier."""

    global_epoch: int
    edge_train_loss: np.ndarray
    edge_val_accuracy: np.ndarray
    edge_val_entropy: np.ndarray
    weights: AggregationWeights
    central_val_loss: float
    central_val_acc: float
    duration_s: float


@dataclass(frozen=True)
class RunLog:
    """Per-epoch curves plus the one-shot final test evaluation."""

    epochs: tuple[EpochLog, ...]
    final_eval: Evaluation
    wall_time_s: float


def _resolve_workers(workers: int | None) -> int:
    if workers is None:
        env = os.environ.get(ENV_WORKERS, "").strip()
        if env:
            workers = int(env)
        else:
            workers = os.cpu_count() or 1
    if workers < 1:
        raise ValueError(f"worker count must be >= 1, got {workers}")
    return workers


def _check_compatible(cfg: RunConfig, ds: Dataset, name: str) -> None:
    if ds.d != cfg.model.layer_sizes[0]:
        raise ValueError(
            f"{name} has {ds.d} features, model expects {cfg.model.layer_sizes[0]}"
        )
    if ds.num_classes != cfg.model.num_classes:
        raise ValueError(
            f"{name} has {ds.num_classes} classes, model expects "
            f"{cfg.model.num_classes}"
        )


def run(
    cfg: RunConfig,
    train_ds: Dataset,
    val_ds: Dataset,
    test_ds: Dataset,
    workers: int | None = None,
) -> tuple[ParamVector, RunLog]:
    """Shard the training data and run the full global loop."""
    for name, ds in (("train", train_ds), ("val", val_ds), ("test", test_ds)):
        _check_compatible(cfg, ds, name)
    shards = shard(train_ds, cfg.num_subsets, seed=cfg.master_seed)
    return run_on_shards(cfg, shards, val_ds, test_ds, workers=workers)


def run_on_shards(
    cfg: RunConfig,
    shards: ShardSet,
    val_ds: Dataset,
    test_ds: Dataset,
    workers: int | None = None,
    edge_stream=None,
) -> tuple[ParamVector, RunLog]:
    """Global loop over pre-built shards.

    ``edge_stream(g, i)`` may override the per-edge RNG derivation;
    the default spawns SeedSequence(master_seed, spawn_key=(g, i)), so
    an edge's shuffle stream depends only on the epoch and its id,
    never on scheduling.
    """
    if len(shards) != cfg.num_subsets:
        raise ValueError(
            f"config expects {cfg.num_subsets} shards, got {len(shards)}"
        )
    n_workers = _resolve_workers(workers)
    if edge_stream is None:

        def edge_stream(g: int, i: int) -> np.random.Generator:
            return np.random.default_rng(
                np.random.SeedSequence(cfg.master_seed, spawn_key=(g, i))
            )

    theta = init_params(cfg.model)
    k = cfg.model.num_classes
    epochs: list[EpochLog] = []
    t_start = time.perf_counter()

    def edge_task(g: int, i: int, central: ParamVector):
        try:
            trained = train_local(
                central, cfg.model, shards[i], cfg.train, rng=edge_stream(g, i)
            )
        except DivergenceError as exc:
            raise DivergenceError(exc.epoch, exc.batch, edge=i, global_epoch=g) from exc
        shard_probs = forward(trained, cfg.model, shards[i].features)
        train_loss = log_loss(shard_probs, shards[i].labels)
        val_eval = evaluate(forward(trained, cfg.model, val_ds.features), val_ds.labels, k)
        return trained, train_loss, val_eval.accuracy, val_eval.mean_entropy

    pool = (
        ThreadPoolExecutor(max_workers=n_workers)
        if n_workers > 1 and cfg.num_subsets > 1
        else None
    )
    try:
        for g in range(cfg.global_epochs):
            t_epoch = time.perf_counter()
            if pool is not None:
                results = list(
                    pool.map(lambda i: edge_task(g, i, theta), range(cfg.num_subsets))
                )
            else:
                results = [edge_task(g, i, theta) for i in range(cfg.num_subsets)]
            # aggregation barrier: everything below sees results in edge order
            trained = [r[0] for r in results]
            train_losses = np.array([r[1] for r in results])
            accs = np.array([r[2] for r in results])
            ents = np.array([r[3] for r in results])
            scored = dua_weights(accs, ents, cfg.weighting)
            if cfg.method == "dua_d2c":
                weights = scored
            else:
                weights = AggregationWeights(
                    scored.confidence, scored.score, uniform_weights(cfg.num_subsets)
                )
            theta = aggregate_params(trained, weights.alpha)
            central = evaluate(forward(theta, cfg.model, val_ds.features), val_ds.labels, k)
            epochs.append(
                EpochLog(
                    global_epoch=g,
                    edge_train_loss=train_losses,
                    edge_val_accuracy=accs,
                    edge_val_entropy=ents,
                    weights=weights,
                    central_val_loss=central.log_loss,
                    central_val_acc=central.accuracy,
                    duration_s=time.perf_counter() - t_epoch,
                )
            )
    finally:
        if pool is not None:
            pool.shutdown()

    final_eval = evaluate(forward(theta, cfg.model, test_ds.features), test_ds.labels, k)
    log = RunLog(tuple(epochs), final_eval, time.perf_counter() - t_start)
    return theta, log


def decision_grid(
    p: ParamVector,
    cfg: MLPConfig,
    bounds: tuple[float, float, float, float],
    resolution: int,
) -> np.ndarray:
    """Argmax predictions on a resolution x resolution lattice.

    ``bounds`` is (x_min, x_max, y_min, y_max) over a 2-feature input
    space; row i of the result follows y values ascending, column j
    follows x ascending, emitted row-major.
    """
    if cfg.layer_sizes[0] != 2:
        raise ValueError("decision_grid needs a 2-feature model")
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2, got {resolution}")
    x_min, x_max, y_min, y_max = bounds
    if not (x_min < x_max and y_min < y_max):
        raise ValueError(f"bounds must be ordered, got {bounds}")
    xs = np.linspace(x_min, x_max, resolution)
    ys = np.linspace(y_min, y_max, resolution)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    probs = forward(p, cfg, pts)
    return np.argmax(probs, axis=1).reshape(resolution, resolution).astype(np.int64)


@dataclass(frozen=True)
class SweepSpec:
    """Grid sweep: cells are the cartesian product of the value lists.

    Unset grids reuse the base config's value. Every cell runs ``reps``
    times with distinct seeds spawned from (cell index, repetition).
    """

    base: RunConfig
    subsets: tuple[int, ...] | None = None
    local_epochs: tuple[int, ...] | None = None
    lambdas: tuple[float, ...] | None = None
    c_maxes: tuple[float, ...] | None = None
    reps: int = 1

    def __post_init__(self) -> None:
        if self.reps < 1:
            raise ValueError(f"reps must be >= 1, got {self.reps}")
        for name in ("subsets", "local_epochs", "lambdas", "c_maxes"):
            val = getattr(self, name)
            if val is not None:
                if len(val) == 0:
                    raise ValueError(f"{name} grid must not be empty")
                object.__setattr__(self, name, tuple(val))

    def cells(self) -> list[dict]:
        subsets = self.subsets or (self.base.num_subsets,)
        epochs = self.local_epochs or (self.base.train.local_epochs,)
        lambdas = self.lambdas or (self.base.weighting.lambda_,)
        cmaxes = self.c_maxes or (self.base.weighting.c_max,)
        return [
            {"subsets": n, "local_epochs": e, "lambda": lam, "c_max": cm}
            for n, e, lam, cm in itertools.product(subsets, epochs, lambdas, cmaxes)
        ]


_EVAL_FIELDS = (
    "accuracy",
    "macro_f1",
    "log_loss",
    "mcc",
    "cohen_kappa",
    "roc_auc_ovr",
    "mean_entropy",
)


def _cell_config(spec: SweepSpec, cell: dict, seed: int) -> RunConfig:
    return replace(
        spec.base,
        num_subsets=cell["subsets"],
        train=replace(spec.base.train, local_epochs=cell["local_epochs"]),
        weighting=replace(
            spec.base.weighting, lambda_=cell["lambda"], c_max=cell["c_max"]
        ),
        master_seed=seed,
    )


def sweep(
    spec: SweepSpec,
    train_ds: Dataset,
    val_ds: Dataset,
    test_ds: Dataset,
    workers: int | None = None,
) -> list[dict]:
    """Run the whole grid; one result row per (cell, repetition).

    Cells whose shard precondition fails (a class with fewer samples
    than subsets) are recorded with status "skipped" instead of
    aborting. Rows are emitted in deterministic cell-then-rep order.
    """
    rows: list[dict] = []
    for cell_idx, cell in enumerate(spec.cells()):
        for rep in range(spec.reps):
            seed = int(
                np.random.SeedSequence(
                    spec.base.master_seed, spawn_key=(cell_idx, rep)
                ).generate_state(1)[0]
            )
            row = dict(cell)
            row["rep"] = rep
            row["seed"] = seed
            try:
                cfg = _cell_config(spec, cell, seed)
                _, log = run(cfg, train_ds, val_ds, test_ds, workers=workers)
            except InsufficientClassDataError as exc:
                row["status"] = "skipped"
                row["reason"] = str(exc)
                for f in ("val_accuracy", "val_log_loss") + _EVAL_FIELDS:
                    row[f] = ""
                rows.append(row)
                continue
            row["status"] = "ok"
            row["reason"] = ""
            row["val_accuracy"] = log.epochs[-1].central_val_acc
            row["val_log_loss"] = log.epochs[-1].central_val_loss
            for f in _EVAL_FIELDS:
                row[f] = getattr(log.final_eval, f)
            rows.append(row)
    return rows


def summarize_sweep(rows: list[dict]) -> list[dict]:
    """Aggregate sweep rows per cell and rank the cells.

    Ranking: mean validation accuracy descending, ties broken by lower
    mean validation log loss. Cells with no completed repetition sort
    last with status "skipped".
    """
    cells: dict[tuple, dict] = {}
    for row in rows:
        key = (row["subsets"], row["local_epochs"], row["lambda"], row["c_max"])
        cells.setdefault(key, []).append(row)

    summary = []
    for key, members in cells.items():
        ok = [r for r in members if r["status"] == "ok"]
        entry: dict = {
            "subsets": key[0],
            "local_epochs": key[1],
            "lambda": key[2],
            "c_max": key[3],
            "reps_ok": len(ok),
            "reps_skipped": len(members) - len(ok),
            "status": "ok" if ok else "skipped",
        }
        for field in ("val_accuracy", "val_log_loss") + _EVAL_FIELDS:
            vals = np.array([r[field] for r in ok], dtype=np.float64) if ok else None
            if vals is None:
                entry[f"{field}_mean"] = ""
                entry[f"{field}_min"] = ""
                entry[f"{field}_max"] = ""
            else:
                entry[f"{field}_mean"] = float(vals.mean())
                entry[f"{field}_min"] = float(vals.min())
                entry[f"{field}_max"] = float(vals.max())
        summary.append(entry)

    def rank_key(e: dict):
        if e["status"] != "ok":
            return (1, 0.0, 0.0)
        return (0, -e["val_accuracy_mean"], e["val_log_loss_mean"])

    summary.sort(key=rank_key)
    for i, entry in enumerate(summary):
        entry["rank"] = i + 1
    return summary
