"""Numba hot-path kernels: explicit-loop twins of the numpy backend.

Same flat parameter layout and signatures as ``numpy_backend``. All
matrix products are hand-rolled loops with a fixed accumulation order,
so results are bit-reproducible for a given backend regardless of
thread count or BLAS build. Clamps and floors are written as branches
that leave NaN untouched, so divergence still surfaces in the loss.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

LOGIT_CLAMP = 500.0
PROB_FLOOR = 1e-12


@njit(cache=True, nogil=True)
def _act_offsets(sizes):
    L = sizes.shape[0] - 1
    offs = np.zeros(L + 1, dtype=np.int64)
    for l in range(L):
        offs[l + 1] = offs[l] + sizes[l]
    return offs


@njit(cache=True, nogil=True)
def forward_probs(values, sizes, X):
    L = sizes.shape[0] - 1
    n = X.shape[0]
    K = sizes[L]
    offs = _act_offsets(sizes)
    acts = np.zeros((n, offs[L]))
    for i in range(n):
        for c in range(sizes[0]):
            acts[i, c] = X[i, c]
    probs = np.zeros((n, K))
    poff = 0
    for l in range(L):
        fi = sizes[l]
        fo = sizes[l + 1]
        W = values[poff : poff + fi * fo].reshape(fi, fo)
        poff += fi * fo
        b = values[poff : poff + fo]
        poff += fo
        inoff = offs[l]
        outoff = offs[l + 1]
        last = l == L - 1
        for i in range(n):
            if last:
                for j in range(K):
                    probs[i, j] = b[j]
                for t in range(fi):
                    a = acts[i, inoff + t]
                    if a != 0.0:
                        for j in range(K):
                            probs[i, j] += a * W[t, j]
            else:
                for j in range(fo):
                    z = b[j]
                    for t in range(fi):
                        z += acts[i, inoff + t] * W[t, j]
                    acts[i, outoff + j] = z if z > 0.0 else 0.0
    _softmax_rows_inplace(probs)
    return probs


@njit(cache=True, nogil=True)
def _softmax_rows_inplace(Z):
    n, K = Z.shape
    for i in range(n):
        for j in range(K):
            z = Z[i, j]
            if z > LOGIT_CLAMP:
                z = LOGIT_CLAMP
            elif z < -LOGIT_CLAMP:
                z = -LOGIT_CLAMP
            Z[i, j] = z
        mx = Z[i, 0]
        for j in range(1, K):
            if Z[i, j] > mx:
                mx = Z[i, j]
        total = 0.0
        for j in range(K):
            e = math.exp(Z[i, j] - mx)
            Z[i, j] = e
            total += e
        for j in range(K):
            Z[i, j] /= total
    return Z


@njit(cache=True, nogil=True)
def _loss_grad_dropout(values, sizes, X, y, dropout_p, U):
    L = sizes.shape[0] - 1
    n = X.shape[0]
    K = sizes[L]
    offs = _act_offsets(sizes)
    scale = 1.0 / (1.0 - dropout_p) if dropout_p > 0.0 else 1.0

    acts = np.zeros((n, offs[L]))
    for i in range(n):
        for c in range(sizes[0]):
            acts[i, c] = X[i, c]
    probs = np.zeros((n, K))
    poff = 0
    for l in range(L):
        fi = sizes[l]
        fo = sizes[l + 1]
        W = values[poff : poff + fi * fo].reshape(fi, fo)
        poff += fi * fo
        b = values[poff : poff + fo]
        poff += fo
        inoff = offs[l]
        outoff = offs[l + 1]
        last = l == L - 1
        hoff = outoff - sizes[0]  # column block in U for this layer's output
        for i in range(n):
            if last:
                for j in range(K):
                    probs[i, j] = b[j]
                for t in range(fi):
                    a = acts[i, inoff + t]
                    if a != 0.0:
                        for j in range(K):
                            probs[i, j] += a * W[t, j]
            else:
                for j in range(fo):
                    z = b[j]
                    for t in range(fi):
                        z += acts[i, inoff + t] * W[t, j]
                    h = z if z > 0.0 else 0.0
                    if dropout_p > 0.0:
                        if U[i, hoff + j] >= dropout_p:
                            h *= scale
                        else:
                            h = 0.0
                    acts[i, outoff + j] = h
    _softmax_rows_inplace(probs)

    loss = 0.0
    for i in range(n):
        q = probs[i, y[i]]
        if q < PROB_FLOOR:
            q = PROB_FLOOR
        loss -= math.log(q)
    loss /= n

    grad = np.zeros_like(values)
    maxw = 0
    for l in range(L + 1):
        if sizes[l] > maxw:
            maxw = sizes[l]
    delta = np.zeros((n, maxw))
    dnext = np.zeros((n, maxw))
    for i in range(n):
        for j in range(K):
            delta[i, j] = probs[i, j] / n
        delta[i, y[i]] -= 1.0 / n

    for l in range(L - 1, -1, -1):
        fi = sizes[l]
        fo = sizes[l + 1]
        poff -= fo
        boff = poff
        poff -= fi * fo
        W = values[poff : poff + fi * fo].reshape(fi, fo)
        inoff = offs[l]
        # weight and bias gradients, accumulated over rows in order
        for i in range(n):
            for t in range(fi):
                a = acts[i, inoff + t]
                if a != 0.0:
                    base = poff + t * fo
                    for j in range(fo):
                        grad[base + j] += a * delta[i, j]
            for j in range(fo):
                grad[boff + j] += delta[i, j]
        if l > 0:
            hoff = inoff - sizes[0]
            for i in range(n):
                for t in range(fi):
                    if acts[i, inoff + t] <= 0.0:
                        dnext[i, t] = 0.0
                    else:
                        s = 0.0
                        for j in range(fo):
                            s += delta[i, j] * W[t, j]
                        if dropout_p > 0.0 and U[i, hoff + t] < dropout_p:
                            dnext[i, t] = 0.0
                        else:
                            dnext[i, t] = s * scale if dropout_p > 0.0 else s
            tmp = delta
            delta = dnext
            dnext = tmp
    return loss, grad


@njit(cache=True, nogil=True)
def loss_and_grad(values, sizes, X, y):
    U = np.zeros((0, 0))
    return _loss_grad_dropout(values, sizes, X, y, 0.0, U)


@njit(cache=True, nogil=True)
def train_epochs(
    values,
    sizes,
    X,
    y,
    orders,
    batch_size,
    lr,
    opt_code,
    beta1,
    beta2,
    adam_eps,
    dropout_p,
    drop_u,
):
    v = values.copy()
    n = X.shape[0]
    d = X.shape[1]
    P = values.shape[0]
    n_epochs = orders.shape[0]
    losses = np.zeros(n_epochs)
    m_state = np.zeros(P)
    v_state = np.zeros(P)
    t = 0
    empty_u = np.zeros((0, 0))
    for e in range(n_epochs):
        total = 0.0
        bi = 0
        for s in range(0, n, batch_size):
            stop = s + batch_size
            if stop > n:
                stop = n
            bs = stop - s
            Xb = np.empty((bs, d))
            yb = np.empty(bs, dtype=np.int64)
            for r in range(bs):
                row = orders[e, s + r]
                for c in range(d):
                    Xb[r, c] = X[row, c]
                yb[r] = y[row]
            if dropout_p > 0.0:
                Ub = np.ascontiguousarray(drop_u[e, s:stop])
            else:
                Ub = empty_u
            loss, grad = _loss_grad_dropout(v, sizes, Xb, yb, dropout_p, Ub)
            if not np.isfinite(loss):
                return v, losses, e, bi
            total += loss * bs
            if opt_code == 1:
                t += 1
                bc1 = 1.0 - beta1**t
                bc2 = 1.0 - beta2**t
                for j in range(P):
                    g = grad[j]
                    m_state[j] = beta1 * m_state[j] + (1.0 - beta1) * g
                    v_state[j] = beta2 * v_state[j] + (1.0 - beta2) * g * g
                    v[j] -= lr * (m_state[j] / bc1) / (
                        math.sqrt(v_state[j] / bc2) + adam_eps
                    )
            else:
                for j in range(P):
                    v[j] -= lr * grad[j]
            bi += 1
        losses[e] = total / n
    return v, losses, -1, -1
