"""Datasets, synthetic generators, stratified splitting and sharding.

Everything here is deterministic in the seeds it is given. Datasets are
frozen after construction; all operations return new objects.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

__all__ = [
    "Dataset",
    "SplitSpec",
    "ShardSet",
    "InsufficientClassDataError",
    "fingerprint",
    "load_csv",
    "save_csv",
    "gen_synthetic",
    "stratified_split",
    "shard",
    "augment_shards",
]

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_FNV_MASK = 0xFFFFFFFFFFFFFFFF


class InsufficientClassDataError(ValueError):
    """Raised when a class has too few samples for the requested operation."""


def _fnv1a(data: bytes, h: int = _FNV_OFFSET) -> int:
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _FNV_MASK
    return h


def fingerprint(features: np.ndarray, labels: np.ndarray) -> int:
    """64-bit FNV-1a hash over row-major feature bytes, then label bytes."""
    h = _fnv1a(np.ascontiguousarray(features, dtype=np.float64).tobytes())
    return _fnv1a(np.ascontiguousarray(labels, dtype=np.int64).tobytes(), h)


@dataclass(frozen=True)
class Dataset:
    """Immutable labelled dataset: float64 features, int64 class labels.

    Labels are class indices in ``[0, num_classes)``. At least two classes
    must exist; features must be finite.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        labs = np.ascontiguousarray(self.labels, dtype=np.int64)
        if feats.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {feats.shape}")
        if labs.ndim != 1 or labs.shape[0] != feats.shape[0]:
            raise ValueError(
                f"labels shape {labs.shape} does not match {feats.shape[0]} rows"
            )
        if not np.isfinite(feats).all():
            raise ValueError("non-finite feature value in dataset")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if labs.size and (labs.min() < 0 or labs.max() >= self.num_classes):
            raise ValueError("label out of range for num_classes")
        feats.setflags(write=False)
        labs.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @cached_property
    def digest(self) -> int:
        return fingerprint(self.features, self.labels)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def take(self, idx: np.ndarray) -> "Dataset":
        """New Dataset from a row-index selection (class count preserved)."""
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)


@dataclass(frozen=True)
class SplitSpec:
    """Stratified split parameters: held-out fraction and shuffle seed."""

    validation_fraction: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError(
                f"validation_fraction must lie in (0, 1), got {self.validation_fraction}"
            )


@dataclass(frozen=True)
class ShardSet:
    """Disjoint stratified shards of one parent dataset.

    ``parent_fingerprint`` is the FNV-1a digest of the dataset the shards
    partition. For augmented shard sets it refers to the union of the
    augmented shards themselves, since augmentation creates new rows.
    """

    shards: tuple[Dataset, ...]
    parent_fingerprint: int = field(default=0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "shards", tuple(self.shards))
        if not self.shards:
            raise ValueError("ShardSet needs at least one shard")
        k = self.shards[0].num_classes
        d = self.shards[0].d
        for s in self.shards:
            if s.num_classes != k or s.d != d:
                raise ValueError("shards disagree on feature width or class count")

    def __len__(self) -> int:
        return len(self.shards)

    def __iter__(self):
        return iter(self.shards)

    def __getitem__(self, i: int) -> Dataset:
        return self.shards[i]


def load_csv(path: str | os.PathLike, label_column: str) -> Dataset:
    """Load a headered CSV into a Dataset.

    All columns except ``label_column`` are parsed as float64 features.
    Label values are encoded as class indices in order of first
    appearance. Files with fewer than two distinct labels are rejected.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, header required") from None
        if label_column not in header:
            raise ValueError(f"{path}: no column named {label_column!r}")
        label_idx = header.index(label_column)
        feat_idx = [i for i in range(len(header)) if i != label_idx]
        if not feat_idx:
            raise ValueError(f"{path}: no feature columns")
        rows: list[list[float]] = []
        raw_labels: list[str] = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields")
            vals = []
            for i in feat_idx:
                try:
                    v = float(rec[i])
                except ValueError:
                    raise ValueError(
                        f"{path}:{lineno}: non-numeric feature {rec[i]!r}"
                    ) from None
                if not np.isfinite(v):
                    raise ValueError(
                        f"{path}:{lineno}: non-finite feature {rec[i]!r}"
                    )
                vals.append(v)
            rows.append(vals)
            raw_labels.append(rec[label_idx])
    if not rows:
        raise ValueError(f"{path}: no data rows")
    # first-appearance label encoding
    encoding: dict[str, int] = {}
    labels = np.empty(len(raw_labels), dtype=np.int64)
    for i, lab in enumerate(raw_labels):
        if lab not in encoding:
            encoding[lab] = len(encoding)
        labels[i] = encoding[lab]
    if len(encoding) < 2:
        raise ValueError(f"{path}: needs at least 2 classes, found {len(encoding)}")
    return Dataset(np.asarray(rows, dtype=np.float64), labels, len(encoding))


def save_csv(ds: Dataset, path: str | os.PathLike, label_column: str = "label") -> None:
    """Write a Dataset as a headered CSV (features x0..x{d-1}, then labels).

    Floats are written with repr precision so a reload round-trips bit
    for bit.
    """
    with open(os.fspath(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j}" for j in range(ds.d)] + [label_column])
        for i in range(ds.n):
            writer.writerow([repr(float(v)) for v in ds.features[i]] + [int(ds.labels[i])])


def gen_synthetic(
    n: int,
    d: int,
    num_classes: int,
    class_sep: float = 1.0,
    noise_frac: float = 0.0,
    seed: int = 0,
) -> Dataset:
    """Gaussian blob dataset with optional uniform label flips.

    Class c's blob is an isotropic unit Gaussian centred c * class_sep
    along the diagonal unit direction, so adjacent class means sit
    class_sep apart. Class sizes are as balanced as n allows (earlier
    classes take the remainder). ``noise_frac`` of the rows, chosen
    without replacement, get their label flipped to a different class
    drawn uniformly at random. Deterministic in ``seed``.
    """
    if n < num_classes:
        raise ValueError(f"need n >= num_classes, got n={n}, K={num_classes}")
    if not 0.0 <= noise_frac < 1.0:
        raise ValueError(f"noise_frac must lie in [0, 1), got {noise_frac}")
    rng = np.random.default_rng(seed)
    labels = np.arange(n, dtype=np.int64) % num_classes
    direction = np.full(d, 1.0 / np.sqrt(d))
    centers = np.outer(np.arange(num_classes, dtype=np.float64) * class_sep, direction)
    features = centers[labels] + rng.standard_normal((n, d))
    n_flip = int(round(noise_frac * n))
    if n_flip:
        flip_idx = rng.choice(n, size=n_flip, replace=False)
        # uniform draw over the K-1 other classes
        shift = rng.integers(1, num_classes, size=n_flip)
        labels = labels.copy()
        labels[flip_idx] = (labels[flip_idx] + shift) % num_classes
    return Dataset(features, labels, num_classes)


def _stratified_take(
    labels: np.ndarray, num_classes: int, fraction: float, rng: np.random.Generator
) -> np.ndarray:
    """Indices of a stratified sample: per-class floor of fraction * count,
    remainders distributed largest-first (ties to the lower class index)
    until the total matches round(fraction * n)."""
    n = labels.shape[0]
    total_target = int(round(fraction * n))
    picks: list[np.ndarray] = []
    floors = np.empty(num_classes, dtype=np.int64)
    remainders = np.empty(num_classes, dtype=np.float64)
    shuffled: list[np.ndarray] = []
    for c in range(num_classes):
        idx = np.flatnonzero(labels == c)
        idx = rng.permutation(idx)
        shuffled.append(idx)
        exact = fraction * idx.shape[0]
        floors[c] = int(np.floor(exact))
        remainders[c] = exact - floors[c]
    short = total_target - int(floors.sum())
    counts = floors.copy()
    if short > 0:
        # stable sort keeps lower class index first on remainder ties
        order = np.argsort(-remainders, kind="stable")
        for c in order[:short]:
            counts[c] += 1
    for c in range(num_classes):
        picks.append(shuffled[c][: counts[c]])
    return np.sort(np.concatenate(picks))


def stratified_split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Split into (train, validation) preserving class proportions.

    Every class keeps its share of the held-out fraction to within one
    sample. Classes with a single sample cannot be split meaningfully
    and are rejected.
    """
    counts = ds.class_counts()
    lone = np.flatnonzero(counts < 2)
    if lone.size:
        raise InsufficientClassDataError(
            f"class {int(lone[0])} has {int(counts[lone[0]])} sample(s), need >= 2"
        )
    rng = np.random.default_rng(spec.seed)
    val_idx = _stratified_take(ds.labels, ds.num_classes, spec.validation_fraction, rng)
    mask = np.zeros(ds.n, dtype=bool)
    mask[val_idx] = True
    train_idx = np.flatnonzero(~mask)
    return ds.take(train_idx), ds.take(val_idx)


def shard(ds: Dataset, num_shards: int, seed: int = 0) -> ShardSet:
    """Partition a dataset into stratified shards.

    Rows of each class are shuffled, then dealt round-robin with the
    dealing position carried from class to class, which keeps both the
    per-class counts (difference at most 1) and the shard sizes
    balanced. Every class must have at least ``num_shards`` samples so
    that each shard sees each class.
    """
    if num_shards < 1:
        raise ValueError(f"num_shards must be >= 1, got {num_shards}")
    counts = ds.class_counts()
    starved = np.flatnonzero(counts < num_shards)
    if starved.size:
        raise InsufficientClassDataError(
            f"insufficient per-class data: class {int(starved[0])} has "
            f"{int(counts[starved[0]])} sample(s) for {num_shards} shards"
        )
    rng = np.random.default_rng(seed)
    assignments: list[list[int]] = [[] for _ in range(num_shards)]
    pos = 0
    for c in range(ds.num_classes):
        idx = rng.permutation(np.flatnonzero(ds.labels == c))
        for row in idx:
            assignments[pos].append(int(row))
            pos = (pos + 1) % num_shards
    shards = tuple(ds.take(np.asarray(a, dtype=np.int64)) for a in assignments)
    return ShardSet(shards, ds.digest)


def augment_shards(
    ss: ShardSet, jitter_sigma: float, multiplier: int, seed: int = 0
) -> ShardSet:
    """Expand each shard to ``multiplier`` times its size with jittered copies.

    Original rows are kept verbatim; the extra rows are copies with
    isotropic Gaussian feature noise of scale ``jitter_sigma`` and the
    source row's label. Each shard draws from its own substream, so no
    augmented row leaks across shards even under a shared seed.
    ``multiplier`` 1 with zero sigma returns the input unchanged.
    """
    if multiplier < 1:
        raise ValueError(f"multiplier must be >= 1, got {multiplier}")
    if jitter_sigma < 0:
        raise ValueError(f"jitter_sigma must be >= 0, got {jitter_sigma}")
    if multiplier == 1:
        return ss
    out: list[Dataset] = []
    for i, sd in enumerate(ss.shards):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        blocks_f = [sd.features]
        blocks_l = [sd.labels]
        for _ in range(multiplier - 1):
            noise = rng.standard_normal(sd.features.shape) * jitter_sigma
            blocks_f.append(sd.features + noise)
            blocks_l.append(sd.labels)
        out.append(
            Dataset(np.concatenate(blocks_f), np.concatenate(blocks_l), sd.num_classes)
        )
    union_f = np.concatenate([sd.features for sd in out])
    union_l = np.concatenate([sd.labels for sd in out])
    return ShardSet(tuple(out), fingerprint(union_f, union_l))
