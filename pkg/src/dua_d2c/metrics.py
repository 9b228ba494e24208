"""Classification metrics computed from predicted probabilities.

Everything takes an (n, K) probability matrix plus integer labels and
is invariant to row order. Conventions that matter for reproducibility:
argmax ties resolve to the lowest class index, probabilities are
floored at 1e-12 inside the log, absent classes contribute an F1 of 0,
and ranking ties in the AUC receive half credit (average ranks).
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

__all__ = [
    "Evaluation",
    "evaluate",
    "confusion_matrix",
    "log_loss",
    "mean_entropy",
]

PROB_FLOOR = 1e-12
ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class Evaluation:
    """The seven-number summary of one model on one dataset."""

    accuracy: float
    macro_f1: float
    log_loss: float
    mcc: float
    cohen_kappa: float
    roc_auc_ovr: float
    mean_entropy: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def _check_probs(probs: np.ndarray, labels: np.ndarray, num_classes: int):
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2:
        raise ValueError(f"probs must be 2-D, got shape {probs.shape}")
    if probs.shape[0] == 0:
        raise ValueError("cannot evaluate zero rows")
    if probs.shape[1] != num_classes:
        raise ValueError(f"probs has {probs.shape[1]} columns, expected {num_classes}")
    if labels.shape != (probs.shape[0],):
        raise ValueError(f"labels shape {labels.shape} does not match probs")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError("label out of range")
    row_sums = probs.sum(axis=1)
    if not np.all(np.abs(row_sums - 1.0) <= ROW_SUM_TOL):
        worst = int(np.argmax(np.abs(row_sums - 1.0)))
        raise ValueError(
            f"probability rows must sum to 1 within {ROW_SUM_TOL}, "
            f"row {worst} sums to {row_sums[worst]!r}"
        )
    if probs.min() < 0.0:
        raise ValueError("negative probability")
    return probs, labels


def confusion_matrix(
    predicted: np.ndarray, labels: np.ndarray, num_classes: int
) -> np.ndarray:
    """(K, K) count matrix, rows true class, columns predicted class."""
    predicted = np.asarray(predicted, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predicted.shape != labels.shape:
        raise ValueError("predicted and labels must have the same shape")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels, predicted), 1)
    return cm


def log_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log probability of the true class, floored at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    py = probs[np.arange(labels.shape[0]), labels]
    return float(-np.log(np.maximum(py, PROB_FLOOR)).mean())


def mean_entropy(probs: np.ndarray) -> float:
    """Mean per-row Shannon entropy in nats, with 0 log 0 taken as 0."""
    probs = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0.0, probs * np.log(probs), 0.0)
    return float(-terms.sum(axis=1).mean())


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties averaged (midranks)."""
    n = x.shape[0]
    order = np.argsort(x, kind="stable")
    sx = x[order]
    new_group = np.empty(n, dtype=bool)
    new_group[0] = True
    new_group[1:] = sx[1:] != sx[:-1]
    group_id = np.cumsum(new_group) - 1
    starts = np.flatnonzero(new_group)
    ends = np.append(starts[1:], n)
    avg = (starts + 1 + ends) / 2.0  # midrank of each tie group
    ranks = np.empty(n)
    ranks[order] = avg[group_id]
    return ranks


def _auc_one_vs_rest(scores: np.ndarray, positive: np.ndarray) -> float:
    """Mann-Whitney AUC; equals trapezoidal ROC area with half-credit ties."""
    n_pos = int(positive.sum())
    n_neg = positive.shape[0] - n_pos
    ranks = _average_ranks(scores)
    rank_sum = ranks[positive].sum()
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _macro_auc(probs: np.ndarray, labels: np.ndarray, num_classes: int) -> float:
    aucs = []
    for c in range(num_classes):
        pos = labels == c
        n_pos = int(pos.sum())
        if n_pos == 0 or n_pos == labels.shape[0]:
            continue  # class absent on one side, AUC undefined
        aucs.append(_auc_one_vs_rest(probs[:, c], pos))
    if not aucs:
        return 0.5
    return float(np.mean(aucs))


def _macro_f1(cm: np.ndarray) -> float:
    k = cm.shape[0]
    f1s = np.zeros(k)
    for c in range(k):
        tp = cm[c, c]
        fp = cm[:, c].sum() - tp
        fn = cm[c, :].sum() - tp
        denom = 2 * tp + fp + fn
        f1s[c] = 2.0 * tp / denom if denom > 0 else 0.0
    return float(f1s.mean())


def _mcc(cm: np.ndarray) -> float:
    cm = cm.astype(np.float64)
    t = cm.sum(axis=1)  # true counts
    p = cm.sum(axis=0)  # predicted counts
    s = cm.sum()
    c = np.trace(cm)
    num = c * s - (p * t).sum()
    den = np.sqrt((s * s - (p * p).sum()) * (s * s - (t * t).sum()))
    return float(num / den) if den > 0 else 0.0


def _cohen_kappa(cm: np.ndarray) -> float:
    cm = cm.astype(np.float64)
    s = cm.sum()
    po = np.trace(cm) / s
    pe = (cm.sum(axis=1) * cm.sum(axis=0)).sum() / (s * s)
    if pe >= 1.0:
        return 0.0
    return float((po - pe) / (1.0 - pe))


def evaluate(probs: np.ndarray, labels: np.ndarray, num_classes: int) -> Evaluation:
    """Full metric battery for one probability matrix.

    Rows must sum to 1 within 1e-9. Deterministic, pure, and invariant
    to a joint permutation of rows.
    """
    probs, labels = _check_probs(probs, labels, num_classes)
    predicted = np.argmax(probs, axis=1)
    cm = confusion_matrix(predicted, labels, num_classes)
    n = labels.shape[0]
    return Evaluation(
        accuracy=float(np.trace(cm) / n),
        macro_f1=_macro_f1(cm),
        log_loss=log_loss(probs, labels),
        mcc=_mcc(cm),
        cohen_kappa=_cohen_kappa(cm),
        roc_auc_ovr=_macro_auc(probs, labels, num_classes),
        mean_entropy=mean_entropy(probs),
    )
