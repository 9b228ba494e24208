"""Vectorized numpy reference kernels for the MLP hot path.

Flat parameter layout, per layer l with fan-in ``sizes[l]`` and fan-out
``sizes[l+1]``: weight matrix (fan_in, fan_out) row-major, then bias
(fan_out). Logits are clamped to [-500, 500] and probabilities floored
at 1e-12 inside the loss; both are written with NaN-propagating ufuncs
so a diverging run surfaces as a non-finite batch loss instead of being
silently clipped.
"""

from __future__ import annotations

import functools

import numpy as np

LOGIT_CLAMP = 500.0
PROB_FLOOR = 1e-12


def _quiet(fn):
    # divergence flows through as inf/nan and the callers check
    # finiteness explicitly, so the IEEE warnings are suppressed
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return fn(*args, **kwargs)

    return wrapper


@_quiet
def forward_probs(values: np.ndarray, sizes: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Class probabilities for a batch, dropout disabled."""
    L = sizes.shape[0] - 1
    H = X
    off = 0
    for l in range(L):
        fi = int(sizes[l])
        fo = int(sizes[l + 1])
        W = values[off : off + fi * fo].reshape(fi, fo)
        off += fi * fo
        b = values[off : off + fo]
        off += fo
        Z = H @ W + b
        if l < L - 1:
            H = np.maximum(Z, 0.0)
        else:
            H = _softmax_rows(Z)
    return H


def _softmax_rows(Z: np.ndarray) -> np.ndarray:
    Z = np.minimum(np.maximum(Z, -LOGIT_CLAMP), LOGIT_CLAMP)
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


@_quiet
def loss_and_grad(
    values: np.ndarray, sizes: np.ndarray, X: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its flat parameter gradient."""
    dummy = np.empty((X.shape[0], 0))
    return _loss_grad_dropout(values, sizes, X, y, 0.0, dummy)


def _loss_grad_dropout(
    values: np.ndarray,
    sizes: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
    dropout_p: float,
    U: np.ndarray,
) -> tuple[float, np.ndarray]:
    """Forward and backward for one batch.

    ``U`` holds pre-drawn uniforms, one column block per hidden layer,
    aligned with the batch rows; ignored when dropout_p == 0.
    """
    L = sizes.shape[0] - 1
    n = X.shape[0]
    acts: list[np.ndarray] = [X]
    weights: list[np.ndarray] = []
    masks: list[np.ndarray | None] = []
    off = 0
    hoff = 0
    H = X
    for l in range(L):
        fi = int(sizes[l])
        fo = int(sizes[l + 1])
        W = values[off : off + fi * fo].reshape(fi, fo)
        off += fi * fo
        b = values[off : off + fo]
        off += fo
        weights.append(W)
        Z = H @ W + b
        if l < L - 1:
            H = np.maximum(Z, 0.0)
            if dropout_p > 0.0:
                mask = (U[:, hoff : hoff + fo] >= dropout_p) / (1.0 - dropout_p)
                H = H * mask
                masks.append(mask)
            else:
                masks.append(None)
            hoff += fo
            acts.append(H)
        else:
            H = _softmax_rows(Z)
    probs = H
    py = probs[np.arange(n), y]
    loss = float(-np.log(np.maximum(py, PROB_FLOOR)).mean())

    grad = np.empty_like(values)
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    for l in range(L - 1, -1, -1):
        fi = int(sizes[l])
        fo = int(sizes[l + 1])
        off -= fo
        boff = off
        off -= fi * fo
        grad[off : off + fi * fo] = (acts[l].T @ delta).ravel()
        grad[boff : boff + fo] = delta.sum(axis=0)
        if l > 0:
            delta = delta @ weights[l].T
            if masks[l - 1] is not None:
                delta = delta * masks[l - 1]
            delta[acts[l] <= 0.0] = 0.0
    return loss, grad


@_quiet
def train_epochs(
    values: np.ndarray,
    sizes: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
    orders: np.ndarray,
    batch_size: int,
    lr: float,
    opt_code: int,
    beta1: float,
    beta2: float,
    adam_eps: float,
    dropout_p: float,
    drop_u: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, int, int]:
    """Run the given pre-drawn epoch permutations of minibatch training.

    opt_code 0 is plain sgd, 1 is adam with fresh state. Returns the new
    flat parameters, per-epoch mean sample loss, and the (epoch, batch)
    of the first non-finite batch loss, or (-1, -1) when none occurred.
    """
    v = values.copy()
    n = X.shape[0]
    n_epochs = orders.shape[0]
    losses = np.zeros(n_epochs)
    m_state = np.zeros_like(v)
    v_state = np.zeros_like(v)
    t = 0
    for e in range(n_epochs):
        order = orders[e]
        total = 0.0
        for bi, s in enumerate(range(0, n, batch_size)):
            idx = order[s : s + batch_size]
            Xb = X[idx]
            yb = y[idx]
            if dropout_p > 0.0:
                Ub = drop_u[e, s : s + batch_size]
            else:
                Ub = np.empty((idx.shape[0], 0))
            loss, grad = _loss_grad_dropout(v, sizes, Xb, yb, dropout_p, Ub)
            if not np.isfinite(loss):
                return v, losses, e, bi
            total += loss * idx.shape[0]
            if opt_code == 1:
                t += 1
                m_state = beta1 * m_state + (1.0 - beta1) * grad
                v_state = beta2 * v_state + (1.0 - beta2) * grad * grad
                mhat = m_state / (1.0 - beta1**t)
                vhat = v_state / (1.0 - beta2**t)
                v = v - lr * mhat / (np.sqrt(vhat) + adam_eps)
            else:
                v = v - lr * grad
        losses[e] = total / n
    return v, losses, -1, -1
