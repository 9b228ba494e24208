"""Divide-to-conquer training with uncertainty-aware aggregation.

The package trains one small softmax MLP per data shard, scores each
trained copy on a shared validation set, and merges the copies into a
central model with weights built from validation accuracy and
prediction-entropy confidence. Plain uniform merging (d2c) and ordinary
single-model training (traditional) are available through the same
orchestration entry points, so the three regimes can be compared on
identical splits and seeds.
"""

from .data import (
    Dataset,
    ShardSet,
    SplitSpec,
    augment_shards,
    fingerprint,
    gen_synthetic,
    load_csv,
    shard,
    stratified_split,
)
from .models import (
    DivergenceError,
    LinearModel,
    MLPConfig,
    ParamVector,
    TrainConfig,
    forward,
    grad_check,
    init_params,
    load_pv,
    predict_linear,
    save_pv,
    train_local,
)
from .metrics import Evaluation, confusion_matrix, evaluate
from .aggregate import (
    AggregationWeights,
    WeightingConfig,
    aggregate_params,
    composite_score,
    confidence_score,
    normalize_scores,
    uniform_weights,
)
from .orchestrate import (
    EpochLog,
    RunConfig,
    RunLog,
    SweepSpec,
    decision_grid,
    run,
    run_on_shards,
    summarize_sweep,
    sweep,
)
from . import theory

__version__ = "0.1.0"

__all__ = [
    "AggregationWeights",
    "Dataset",
    "DivergenceError",
    "EpochLog",
    "Evaluation",
    "LinearModel",
    "MLPConfig",
    "ParamVector",
    "RunConfig",
    "RunLog",
    "ShardSet",
    "SplitSpec",
    "SweepSpec",
    "TrainConfig",
    "WeightingConfig",
    "aggregate_params",
    "augment_shards",
    "composite_score",
    "confidence_score",
    "confusion_matrix",
    "decision_grid",
    "evaluate",
    "fingerprint",
    "forward",
    "gen_synthetic",
    "grad_check",
    "init_params",
    "load_csv",
    "load_pv",
    "normalize_scores",
    "predict_linear",
    "run",
    "run_on_shards",
    "save_pv",
    "shard",
    "stratified_split",
    "summarize_sweep",
    "sweep",
    "theory",
    "train_local",
    "uniform_weights",
]
