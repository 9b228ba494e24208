"""From-scratch softmax MLP: parameters, training, and serialization.

Parameters live in a flat float64 vector plus a shape descriptor, which
keeps aggregation (weighted sums of vectors) and serialization trivial.
The numerical work is delegated to the kernel backends.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .kernels import get_backend

__all__ = [
    "ParamVector",
    "MLPConfig",
    "TrainConfig",
    "LinearModel",
    "DivergenceError",
    "init_params",
    "forward",
    "train_local",
    "grad_check",
    "predict_linear",
    "save_pv",
    "load_pv",
]

_KIND_CODES = {"dense": 0}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}

Descriptor = tuple[tuple[str, int, int], ...]


class DivergenceError(RuntimeError):
    """Training hit a non-finite loss. Carries where it happened."""

    def __init__(self, epoch: int, batch: int, edge: int | None = None,
                 global_epoch: int | None = None):
        self.epoch = epoch
        self.batch = batch
        self.edge = edge
        self.global_epoch = global_epoch
        msg = f"divergence: non-finite loss at epoch {epoch}, batch {batch}"
        if edge is not None:
            msg += f" (edge {edge}, global epoch {global_epoch})"
        super().__init__(msg)


def _descriptor_length(descriptor: Descriptor) -> int:
    total = 0
    for kind, rows, cols in descriptor:
        if kind not in _KIND_CODES:
            raise ValueError(f"unknown layer kind {kind!r}")
        if rows < 1 or cols < 1:
            raise ValueError(f"descriptor entry must be positive, got ({rows}, {cols})")
        total += rows * cols + rows
    return total


@dataclass(frozen=True)
class ParamVector:
    """Flat float64 parameter vector with its layer-shape descriptor.

    Descriptor entries are (kind, rows, cols) with rows the fan-out, so
    each dense entry accounts for rows * cols weights plus rows biases.
    """

    values: np.ndarray
    descriptor: Descriptor

    def __post_init__(self) -> None:
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        if vals.ndim != 1:
            raise ValueError(f"values must be 1-D, got shape {vals.shape}")
        desc = tuple((str(k), int(r), int(c)) for k, r, c in self.descriptor)
        expect = _descriptor_length(desc)
        if vals.shape[0] != expect:
            raise ValueError(
                f"values length {vals.shape[0]} does not match descriptor ({expect})"
            )
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "descriptor", desc)

    def compatible_with(self, other: "ParamVector") -> bool:
        return self.descriptor == other.descriptor

    def __len__(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class MLPConfig:
    """Architecture: layer sizes [d, hidden..., K], relu hiddens, softmax out."""

    layer_sizes: tuple[int, ...]
    hidden_activation: str = "relu"
    dropout_p: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise ValueError("layer_sizes needs at least input and output widths")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        if self.hidden_activation != "relu":
            raise ValueError(f"unsupported activation {self.hidden_activation!r}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]

    def descriptor(self) -> Descriptor:
        return tuple(
            ("dense", self.layer_sizes[l + 1], self.layer_sizes[l])
            for l in range(len(self.layer_sizes) - 1)
        )

    def sizes_array(self) -> np.ndarray:
        return np.asarray(self.layer_sizes, dtype=np.int64)


@dataclass(frozen=True)
class TrainConfig:
    """Minibatch training settings for one local fit."""

    batch_size: int = 16
    local_epochs: int = 1
    learning_rate: float = 0.01
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.local_epochs < 1:
            raise ValueError(f"local_epochs must be >= 1, got {self.local_epochs}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValueError("adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ValueError(f"adam_eps must be > 0, got {self.adam_eps}")


@dataclass(frozen=True)
class LinearModel:
    """Scalar-output linear map y = x . w + b, used by the theory checks."""

    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self) -> None:
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if w.ndim != 1:
            raise ValueError(f"weights must be 1-D, got shape {w.shape}")
        b = float(self.bias)
        if not (np.isfinite(w).all() and np.isfinite(b)):
            raise ValueError("LinearModel entries must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)


def predict_linear(model: LinearModel, X: np.ndarray) -> float | np.ndarray:
    """Linear prediction: a float for one feature vector, a vector for a matrix."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        if X.shape[0] != model.weights.shape[0]:
            raise ValueError(f"x length {X.shape[0]} does not match weights")
        return float(X @ model.weights + model.bias)
    if X.ndim != 2 or X.shape[1] != model.weights.shape[0]:
        raise ValueError(f"X shape {X.shape} does not match weights")
    return X @ model.weights + model.bias


def init_params(cfg: MLPConfig) -> ParamVector:
    """Glorot-uniform weights, zero biases, deterministic in cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    chunks: list[np.ndarray] = []
    sizes = cfg.layer_sizes
    for l in range(len(sizes) - 1):
        fan_in, fan_out = sizes[l], sizes[l + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-limit, limit, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return ParamVector(np.concatenate(chunks), cfg.descriptor())


def _check_model_inputs(p: ParamVector, cfg: MLPConfig, X: np.ndarray) -> np.ndarray:
    if p.descriptor != cfg.descriptor():
        raise ValueError("shape mismatch between ParamVector and MLPConfig")
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != cfg.layer_sizes[0]:
        raise ValueError(
            f"X shape {X.shape} does not match input width {cfg.layer_sizes[0]}"
        )
    return X


def forward(p: ParamVector, cfg: MLPConfig, X: np.ndarray) -> np.ndarray:
    """Class probabilities (n, K); inference mode, dropout off."""
    X = _check_model_inputs(p, cfg, X)
    return get_backend().forward_probs(p.values, cfg.sizes_array(), X)


def train_local(
    p: ParamVector,
    cfg: MLPConfig,
    shard: Dataset,
    tc: TrainConfig,
    rng: np.random.Generator | int | None = None,
) -> ParamVector:
    """Train a copy of ``p`` on one shard for tc.local_epochs epochs.

    Rows are reshuffled every epoch from one sequential stream, so two
    consecutive calls sharing a Generator continue the same stream (and
    under sgd compose into one longer run). Optimizer state is fresh on
    every call. The input ParamVector is never mutated. A non-finite
    minibatch loss raises DivergenceError with the epoch and batch.
    """
    if p.descriptor != cfg.descriptor():
        raise ValueError("shape mismatch between ParamVector and MLPConfig")
    if shard.d != cfg.layer_sizes[0] or shard.num_classes != cfg.num_classes:
        raise ValueError(
            f"shard ({shard.d} features, {shard.num_classes} classes) does not "
            f"match model {cfg.layer_sizes}"
        )
    gen = np.random.default_rng(tc.seed if rng is None else rng)
    n = shard.n
    hidden_total = int(sum(cfg.layer_sizes[1:-1]))
    orders = np.empty((tc.local_epochs, n), dtype=np.int64)
    if cfg.dropout_p > 0.0 and hidden_total > 0:
        drop_u = np.empty((tc.local_epochs, n, hidden_total))
        for e in range(tc.local_epochs):
            orders[e] = gen.permutation(n)
            drop_u[e] = gen.random((n, hidden_total))
        effective_p = cfg.dropout_p
    else:
        for e in range(tc.local_epochs):
            orders[e] = gen.permutation(n)
        drop_u = np.zeros((1, 1, 1))
        effective_p = 0.0
    backend = get_backend()
    new_values, _losses, div_epoch, div_batch = backend.train_epochs(
        p.values,
        cfg.sizes_array(),
        shard.features,
        shard.labels,
        orders,
        int(tc.batch_size),
        float(tc.learning_rate),
        1 if tc.optimizer == "adam" else 0,
        float(tc.beta1),
        float(tc.beta2),
        float(tc.adam_eps),
        float(effective_p),
        drop_u,
    )
    if div_epoch >= 0:
        raise DivergenceError(int(div_epoch), int(div_batch))
    if not np.isfinite(new_values).all():
        n_batches = (n + tc.batch_size - 1) // tc.batch_size
        raise DivergenceError(tc.local_epochs - 1, n_batches - 1)
    return ParamVector(new_values, p.descriptor)


def grad_check(
    p: ParamVector, cfg: MLPConfig, batch: tuple[np.ndarray, np.ndarray], h: float = 1e-5
) -> float:
    """Central-difference check of the analytic gradient.

    Compares up to 100 randomly sampled coordinates (fixed internal
    seed) and returns max |analytic - numeric| / max(1, |analytic|).
    Healthy implementations land well under 1e-4.
    """
    X, y = batch
    X = _check_model_inputs(p, cfg, X)
    y = np.ascontiguousarray(y, dtype=np.int64)
    if h <= 0:
        raise ValueError(f"h must be > 0, got {h}")
    backend = get_backend()
    sizes = cfg.sizes_array()
    _, analytic = backend.loss_and_grad(p.values, sizes, X, y)
    n_params = p.values.shape[0]
    rng = np.random.default_rng(0)
    if n_params > 100:
        coords = rng.choice(n_params, size=100, replace=False)
    else:
        coords = np.arange(n_params)
    worst = 0.0
    work = p.values.copy()
    for c in coords:
        orig = work[c]
        work[c] = orig + h
        lp, _ = backend.loss_and_grad(work, sizes, X, y)
        work[c] = orig - h
        lm, _ = backend.loss_and_grad(work, sizes, X, y)
        work[c] = orig
        numeric = (lp - lm) / (2.0 * h)
        err = abs(analytic[c] - numeric) / max(1.0, abs(analytic[c]))
        if err > worst:
            worst = err
    return float(worst)


_PV_HEADER = struct.Struct("<i")
_PV_ENTRY = struct.Struct("<iii")


def save_pv(p: ParamVector, path: str) -> None:
    """Write a ParamVector: int32 layer count, per-layer int32
    (kind, rows, cols), then the values as little-endian float64."""
    with open(path, "wb") as fh:
        fh.write(_PV_HEADER.pack(len(p.descriptor)))
        for kind, rows, cols in p.descriptor:
            fh.write(_PV_ENTRY.pack(_KIND_CODES[kind], rows, cols))
        fh.write(np.ascontiguousarray(p.values, dtype="<f8").tobytes())


def load_pv(path: str) -> ParamVector:
    with open(path, "rb") as fh:
        raw = fh.read(_PV_HEADER.size)
        if len(raw) != _PV_HEADER.size:
            raise ValueError(f"{path}: truncated header")
        (n_layers,) = _PV_HEADER.unpack(raw)
        if n_layers < 1:
            raise ValueError(f"{path}: bad layer count {n_layers}")
        desc = []
        for _ in range(n_layers):
            raw = fh.read(_PV_ENTRY.size)
            if len(raw) != _PV_ENTRY.size:
                raise ValueError(f"{path}: truncated descriptor")
            code, rows, cols = _PV_ENTRY.unpack(raw)
            if code not in _KIND_NAMES:
                raise ValueError(f"{path}: unknown layer kind code {code}")
            desc.append((_KIND_NAMES[code], rows, cols))
        descriptor = tuple(desc)
        expect = _descriptor_length(descriptor)
        values = np.frombuffer(fh.read(), dtype="<f8")
        if values.shape[0] != expect:
            raise ValueError(
                f"{path}: expected {expect} values, found {values.shape[0]}"
            )
    return ParamVector(values.astype(np.float64), descriptor)
