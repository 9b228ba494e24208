"""Monte Carlo and algebraic checks of the variance claims behind sharding.

Averaging k models whose errors share variance s and pairwise
covariance c has variance (s + c(k-1))/k under uniform weights, and
s * sum(alpha^2) + c * sum_{i != l} alpha_i alpha_l under weights alpha.
The helpers here estimate those quantities by simulation so the closed
forms can be asserted against an independent route, and verify the
small identities the derivations rest on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .models import LinearModel, predict_linear

__all__ = [
    "CorrelatedErrorSpec",
    "NoiseSpec",
    "NoiseDecomposition",
    "mc_tolerance",
    "mc_variance_uniform",
    "mc_variance_weighted",
    "linear_average_equivalence",
    "mse_noise_decomposition",
    "variance_identities_check",
]


@dataclass(frozen=True)
class CorrelatedErrorSpec:
    """Equicorrelated Gaussian error model for k estimators.

    Each estimator's error has variance s; every pair has covariance c.
    The covariance matrix (s - c) I + c 11^T is positive semidefinite
    only for -s/(k-1) <= c <= s, which is enforced here.
    """

    k: int
    s: float
    c: float
    trials: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")
        if self.s <= 0:
            raise ValueError(f"s must be > 0, got {self.s}")
        if self.trials < 2:
            raise ValueError(f"trials must be >= 2, got {self.trials}")
        lo = -self.s / (self.k - 1)
        if self.c < lo or self.c > self.s:
            raise ValueError(
                f"c={self.c} outside the positive-semidefinite range "
                f"[{lo!r}, {self.s!r}] for k={self.k}"
            )


def _draw_errors(spec: CorrelatedErrorSpec) -> np.ndarray:
    """(trials, k) equicorrelated Gaussian draws."""
    rng = np.random.default_rng(spec.seed)
    if spec.c >= 0.0:
        # shared factor plus independent residuals
        shared = math.sqrt(spec.c) * rng.standard_normal((spec.trials, 1))
        own = math.sqrt(spec.s - spec.c) * rng.standard_normal((spec.trials, spec.k))
        return shared + own
    # general PSD case: spectral split into the mean direction (eigenvalue
    # s + (k-1)c) and its orthogonal complement (eigenvalue s - c)
    z = rng.standard_normal((spec.trials, spec.k))
    a = math.sqrt(spec.s - spec.c)
    b = math.sqrt(spec.s + (spec.k - 1) * spec.c) - a
    return a * z + b * z.mean(axis=1, keepdims=True)


def mc_tolerance(estimated: float, trials: int) -> float:
    """Assertion half-width for a Monte Carlo variance estimate."""
    return 4.0 * estimated / math.sqrt(trials)


def mc_variance_uniform(spec: CorrelatedErrorSpec) -> tuple[float, float]:
    """(estimated, theoretical) variance of the uniform average of k errors."""
    errors = _draw_errors(spec)
    estimated = float(errors.mean(axis=1).var(ddof=1))
    theoretical = (spec.s + spec.c * (spec.k - 1)) / spec.k
    return estimated, theoretical


def mc_variance_weighted(
    spec: CorrelatedErrorSpec, alpha: np.ndarray
) -> tuple[float, float]:
    """(estimated, theoretical) variance of the alpha-weighted average."""
    a = np.ascontiguousarray(alpha, dtype=np.float64)
    if a.ndim != 1 or a.shape[0] != spec.k:
        raise ValueError(f"alpha must have length k={spec.k}")
    if not np.isfinite(a).all():
        raise ValueError("alpha must be finite")
    errors = _draw_errors(spec)
    estimated = float((errors @ a).var(ddof=1))
    sum_sq = float((a * a).sum())
    cross = float(a.sum()) ** 2 - sum_sq
    theoretical = spec.s * sum_sq + spec.c * cross
    return estimated, theoretical


def linear_average_equivalence(
    models: list[LinearModel], alpha: np.ndarray, X: np.ndarray
) -> float:
    """Max |prediction of averaged weights - average of predictions|.

    For linear maps the two are algebraically identical, so this returns
    floating-point noise; a nonlinear model breaks the identity.
    """
    if not models:
        raise ValueError("need at least one model")
    a = np.ascontiguousarray(alpha, dtype=np.float64)
    if a.shape != (len(models),):
        raise ValueError("alpha length must match the model count")
    X = np.asarray(X, dtype=np.float64)
    w_bar = np.zeros_like(models[0].weights)
    b_bar = 0.0
    for w, m in zip(a, models):
        w_bar = w_bar + w * m.weights
        b_bar += w * m.bias
    merged = predict_linear(LinearModel(w_bar, b_bar), X)
    averaged = np.zeros(X.shape[0])
    for w, m in zip(a, models):
        averaged += w * predict_linear(m, X)
    return float(np.abs(merged - averaged).max())


@dataclass(frozen=True)
class NoiseSpec:
    """Observation-noise experiment: y = f(x) + N(0, sigma^2) over m draws."""

    sigma: float
    m: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")


@dataclass(frozen=True)
class NoiseDecomposition:
    """Observed MSE against its prediction-error + noise-floor split."""

    observed_mse: float
    prediction_mse: float
    noise_variance: float

    @property
    def reconstructed(self) -> float:
        return self.prediction_mse + self.noise_variance


def mse_noise_decomposition(
    spec: NoiseSpec, true_fn: LinearModel, fitted: LinearModel
) -> NoiseDecomposition:
    """Estimate both sides of: observed MSE = prediction MSE + sigma^2.

    Draws m standard-normal inputs, observes y = true_fn(x) + noise, and
    scores ``fitted`` against the noisy observations (observed) and the
    clean function values (prediction). The irreducible term uses the
    nominal sigma^2, so the two sides differ by Monte Carlo error only.
    """
    if true_fn.weights.shape != fitted.weights.shape:
        raise ValueError("true_fn and fitted must share input width")
    rng = np.random.default_rng(spec.seed)
    X = rng.standard_normal((spec.m, true_fn.weights.shape[0]))
    clean = predict_linear(true_fn, X)
    y = clean + spec.sigma * rng.standard_normal(spec.m)
    pred = predict_linear(fitted, X)
    observed = float(((pred - y) ** 2).mean())
    prediction = float(((pred - clean) ** 2).mean())
    return NoiseDecomposition(observed, prediction, spec.sigma**2)


def _identity_error(lhs: float, rhs: float) -> float:
    return abs(lhs - rhs) / max(1.0, abs(lhs), abs(rhs))


def variance_identities_check(
    samples: np.ndarray, a: float = 2.0, b: float = -3.0, tol: float = 1e-9
) -> dict:
    """Verify the moment identities used by the variance derivations.

    The variance identity runs on the full sample; the covariance and
    linear-combination identities pair the first half against the
    second. Each identity is computed by two independent routes
    (population moments throughout):

      var_expectation:    Var(S)      = E[S^2] - E[S]^2
      cov_expectation:    Cov(X, Y)   = E[XY] - E[X] E[Y]
      linear_combination: Var(aX+bY)  = a^2 Var(X) + b^2 Var(Y) + 2ab Cov(X, Y)

    Errors are |lhs - rhs| / max(1, |lhs|, |rhs|). Returns a report dict
    with per-identity lhs/rhs/error/passed and an overall flag.
    """
    data = np.ascontiguousarray(samples, dtype=np.float64)
    if data.ndim != 1 or data.shape[0] < 2:
        raise ValueError("need a 1-D sample of at least 2 values")
    if not np.isfinite(data).all():
        raise ValueError("samples must be finite")
    half = data.shape[0] // 2
    x = data[:half]
    y = data[half : 2 * half]

    checks: dict[str, dict] = {}

    def add(name: str, lhs: float, rhs: float) -> None:
        err = _identity_error(lhs, rhs)
        checks[name] = {"lhs": lhs, "rhs": rhs, "error": err, "passed": err <= tol}

    v_direct = float(((data - data.mean()) ** 2).mean())
    add("var_expectation", v_direct, float((data**2).mean() - data.mean() ** 2))

    vx_direct = float(((x - x.mean()) ** 2).mean())
    cov_direct = float(((x - x.mean()) * (y - y.mean())).mean())
    add("cov_expectation", cov_direct, float((x * y).mean() - x.mean() * y.mean()))

    z = a * x + b * y
    vz_direct = float(((z - z.mean()) ** 2).mean())
    vy_direct = float(((y - y.mean()) ** 2).mean())
    add(
        "linear_combination",
        vz_direct,
        a * a * vx_direct + b * b * vy_direct + 2.0 * a * b * cov_direct,
    )

    return {"checks": checks, "all_passed": all(c["passed"] for c in checks.values())}
