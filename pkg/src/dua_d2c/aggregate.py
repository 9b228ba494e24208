"""Aggregation weights: entropy confidence, composite scores, weighted merge.

The weighting pipeline turns each edge's validation accuracy a_i and
mean prediction entropy e_i into a merge weight:

    inv_e   = 1 / (e_i + delta_e)           capped at c_max
    u_i     = normalized, clamped confidence in [0, 1]
    s_i     = lambda * a_i + (1 - lambda) * u_i
    alpha_i = s_i / sum(s)                  renormalized to sum exactly 1

Low entropy means a confident edge, so inv_e grows as e_i falls; the
cap keeps near-zero entropies from dominating. The normalization floor
is 1/(ln K + delta_e), the value an edge predicting uniform
probabilities would score, so u spans "no better than uniform" to "at
the cap". Natural log throughout, matching the entropy metric.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .models import ParamVector

__all__ = [
    "WeightingConfig",
    "AggregationWeights",
    "confidence_score",
    "composite_score",
    "normalize_scores",
    "uniform_weights",
    "dua_weights",
    "aggregate_params",
]

ALPHA_SUM_TOL = 1e-9


@dataclass(frozen=True)
class WeightingConfig:
    """Knobs of the confidence/score pipeline.

    lambda_ balances accuracy against confidence; c_max caps the inverse
    entropy; delta_e guards the division; eps_s guards normalization.
    c_max must exceed the uniform-prediction score 1/(ln K + delta_e),
    otherwise every edge would saturate the cap.
    """

    num_classes: int
    lambda_: float = 0.7
    c_max: float = 10.0
    delta_e: float = 1e-8
    eps_s: float = 1e-8

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0.0 <= self.lambda_ <= 1.0:
            raise ValueError(f"lambda_ must lie in [0, 1], got {self.lambda_}")
        if self.delta_e <= 0 or self.eps_s <= 0:
            raise ValueError("delta_e and eps_s must be > 0")
        floor = 1.0 / (math.log(self.num_classes) + self.delta_e)
        if self.c_max <= floor:
            raise ValueError(
                f"c_max must exceed the uniform-prediction score {floor!r}, "
                f"got {self.c_max}"
            )

    @property
    def inv_e_min(self) -> float:
        return 1.0 / (math.log(self.num_classes) + self.delta_e)


def confidence_score(epsilon: float, cfg: WeightingConfig) -> float:
    """Confidence u in [0, 1] from a mean prediction entropy (nats)."""
    if epsilon < 0:
        raise ValueError(f"entropy must be >= 0, got {epsilon}")
    inv_e = 1.0 / (epsilon + cfg.delta_e)
    capped = min(inv_e, cfg.c_max)
    u = (capped - cfg.inv_e_min) / (cfg.c_max - cfg.inv_e_min + cfg.eps_s)
    return min(1.0, max(0.0, u))


def composite_score(accuracy: float, confidence: float, lambda_: float) -> float:
    """Convex blend s = lambda * accuracy + (1 - lambda) * confidence."""
    if not 0.0 <= accuracy <= 1.0:
        raise ValueError(f"accuracy must lie in [0, 1], got {accuracy}")
    if not 0.0 <= confidence <= 1.0:
        raise ValueError(f"confidence must lie in [0, 1], got {confidence}")
    if not 0.0 <= lambda_ <= 1.0:
        raise ValueError(f"lambda_ must lie in [0, 1], got {lambda_}")
    return lambda_ * accuracy + (1.0 - lambda_) * confidence


def _force_unit_sum(alpha: np.ndarray) -> np.ndarray:
    """Nudge one entry so the float64 sum is exactly 1.0.

    Works down the entries from largest to smallest; a single entry can
    fail to converge when the partial-sum rounding oscillates, but a
    different insertion point breaks the cycle. Entries are never pushed
    below zero.
    """
    for idx in np.argsort(-alpha, kind="stable"):
        for _ in range(4):
            residual = 1.0 - alpha.sum()
            if residual == 0.0:
                return alpha
            cand = alpha[idx] + residual
            if cand < 0.0:
                break
            alpha[idx] = cand
    return alpha


def uniform_weights(n: int) -> np.ndarray:
    """Equal weights 1/n, with the sum forced to exactly 1.0."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return _force_unit_sum(np.full(n, 1.0 / n))


def normalize_scores(scores: Sequence[float], eps_s: float = 1e-8) -> np.ndarray:
    """Scores to merge weights: alpha_i = s_i / (sum s + eps_s), renormalized.

    The renormalization makes the weights sum to exactly 1.0 and cancels
    the eps_s perturbation, so scaling all scores by a positive constant
    leaves alpha unchanged up to rounding of the scaled inputs. All-zero
    scores fall back to uniform weights with a warning; all-equal scores
    short-circuit to uniform exactly.
    """
    s = np.ascontiguousarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.shape[0] == 0:
        raise ValueError("scores must be a non-empty 1-D sequence")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    if s.min() < 0:
        raise ValueError(f"scores must be >= 0, got min {s.min()!r}")
    if eps_s <= 0:
        raise ValueError(f"eps_s must be > 0, got {eps_s}")
    total = s.sum()
    if total == 0.0:
        warnings.warn(
            "all composite scores are zero, falling back to uniform weights",
            UserWarning,
        )
        return uniform_weights(s.shape[0])
    if np.all(s == s[0]):
        return uniform_weights(s.shape[0])
    # dividing s/(total+eps_s) and then renormalizing cancels eps_s, so
    # fuse the two stages: the fused quotient scales bit-exactly under
    # power-of-two rescaling of the scores
    alpha = s / total
    return _force_unit_sum(alpha)


@dataclass(frozen=True)
class AggregationWeights:
    """Per-edge confidence u, composite score s, and merge weight alpha."""

    confidence: np.ndarray
    score: np.ndarray
    alpha: np.ndarray

    def __post_init__(self) -> None:
        u = np.ascontiguousarray(self.confidence, dtype=np.float64)
        s = np.ascontiguousarray(self.score, dtype=np.float64)
        a = np.ascontiguousarray(self.alpha, dtype=np.float64)
        if not (u.shape == s.shape == a.shape) or u.ndim != 1:
            raise ValueError("confidence, score and alpha must be equal-length 1-D")
        if u.size and (u.min() < 0 or u.max() > 1):
            raise ValueError("confidence values must lie in [0, 1]")
        if s.size and s.min() < 0:
            raise ValueError("scores must be >= 0")
        if a.size and a.min() < 0:
            raise ValueError("alpha values must be >= 0")
        if abs(a.sum() - 1.0) > ALPHA_SUM_TOL:
            raise ValueError(f"alpha must sum to 1 within {ALPHA_SUM_TOL}")
        for name, arr in (("confidence", u), ("score", s), ("alpha", a)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return int(self.alpha.shape[0])


def dua_weights(
    accuracies: Sequence[float],
    entropies: Sequence[float],
    cfg: WeightingConfig,
) -> AggregationWeights:
    """Full pipeline from per-edge (accuracy, entropy) to merge weights."""
    accs = np.asarray(accuracies, dtype=np.float64)
    ents = np.asarray(entropies, dtype=np.float64)
    if accs.shape != ents.shape or accs.ndim != 1 or accs.shape[0] == 0:
        raise ValueError("need equal-length non-empty accuracy and entropy lists")
    u = np.array([confidence_score(float(e), cfg) for e in ents])
    s = np.array(
        [composite_score(float(a), float(c), cfg.lambda_) for a, c in zip(accs, u)]
    )
    alpha = normalize_scores(s, cfg.eps_s)
    return AggregationWeights(u, s, alpha)


def aggregate_params(
    params: Sequence[ParamVector], alpha: Sequence[float]
) -> ParamVector:
    """Weighted sum of parameter vectors, accumulated in the given order.

    The fixed left-to-right accumulation keeps results bit-reproducible
    across runs and thread counts. All vectors must share one descriptor
    and alpha must be a convex combination (sum 1 within 1e-9).
    """
    params = list(params)
    a = np.ascontiguousarray(alpha, dtype=np.float64)
    if not params:
        raise ValueError("need at least one ParamVector")
    if a.ndim != 1 or a.shape[0] != len(params):
        raise ValueError(f"alpha length {a.shape} does not match {len(params)} params")
    if a.min() < 0:
        raise ValueError("alpha values must be >= 0")
    if abs(a.sum() - 1.0) > ALPHA_SUM_TOL:
        raise ValueError(f"alpha must sum to 1 within {ALPHA_SUM_TOL}, got {a.sum()!r}")
    desc = params[0].descriptor
    for p in params[1:]:
        if p.descriptor != desc:
            raise ValueError("ParamVectors have mismatched descriptors")
    out = a[0] * params[0].values
    for w, p in zip(a[1:], params[1:]):
        out += w * p.values
    return ParamVector(out, desc)
