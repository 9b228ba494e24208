import numpy as np
import pytest

from dua_d2c.data import gen_synthetic
from dua_d2c.kernels import (
    BACKENDS,
    ENV_BACKEND,
    HAS_NUMBA,
    default_backend,
    get_backend,
    numpy_backend,
)
from dua_d2c.models import MLPConfig, init_params

needs_numba = pytest.mark.skipif(not HAS_NUMBA, reason="numba not importable")


def problem(seed=0, n=64, d=3, k=3, sizes=(3, 10, 6, 3)):
    cfg = MLPConfig(layer_sizes=sizes, seed=seed)
    p = init_params(cfg)
    ds = gen_synthetic(n, d, k, class_sep=1.5, seed=seed)
    return cfg, p, ds


def train_args(cfg, p, ds, epochs=3, batch=16, lr=0.01, opt=1, dropout=0.0, seed=5):
    gen = np.random.default_rng(seed)
    n = ds.n
    hidden = int(sum(cfg.layer_sizes[1:-1]))
    orders = np.empty((epochs, n), dtype=np.int64)
    if dropout > 0:
        drop_u = np.empty((epochs, n, hidden))
        for e in range(epochs):
            orders[e] = gen.permutation(n)
            drop_u[e] = gen.random((n, hidden))
    else:
        for e in range(epochs):
            orders[e] = gen.permutation(n)
        drop_u = np.zeros((1, 1, 1))
    return (
        p.values,
        cfg.sizes_array(),
        ds.features,
        ds.labels,
        orders,
        batch,
        lr,
        opt,
        0.9,
        0.999,
        1e-8,
        dropout,
        drop_u,
    )


def test_get_backend_explicit_and_env(monkeypatch):
    assert get_backend("numpy") is numpy_backend
    monkeypatch.setenv(ENV_BACKEND, "numpy")
    assert get_backend() is numpy_backend
    monkeypatch.delenv(ENV_BACKEND)
    assert get_backend().__name__.rsplit(".", 1)[-1] == f"{default_backend()}_backend"


def test_get_backend_rejects_unknown():
    with pytest.raises(ValueError, match="unknown backend"):
        get_backend("cython")


def test_backends_tuple_consistent():
    assert "numpy" in BACKENDS
    assert (default_backend() == "numba") == HAS_NUMBA


@needs_numba
def test_forward_probs_cross_backend():
    nb = get_backend("numba")
    cfg, p, ds = problem()
    a = nb.forward_probs(p.values, cfg.sizes_array(), ds.features)
    b = numpy_backend.forward_probs(p.values, cfg.sizes_array(), ds.features)
    assert np.abs(a - b).max() < 1e-13
    assert np.abs(a.sum(axis=1) - 1).max() < 1e-12


@needs_numba
def test_loss_and_grad_cross_backend():
    nb = get_backend("numba")
    cfg, p, ds = problem(seed=2)
    la, ga = nb.loss_and_grad(p.values, cfg.sizes_array(), ds.features, ds.labels)
    lb, gb = numpy_backend.loss_and_grad(p.values, cfg.sizes_array(), ds.features, ds.labels)
    assert la == pytest.approx(lb, rel=1e-12)
    assert np.abs(ga - gb).max() < 1e-12


@needs_numba
@pytest.mark.parametrize("opt", [0, 1], ids=["sgd", "adam"])
def test_train_epochs_cross_backend(opt):
    nb = get_backend("numba")
    cfg, p, ds = problem(seed=3)
    args = train_args(cfg, p, ds, opt=opt)
    va, la, ea, ba = nb.train_epochs(*args)
    vb, lb, eb, bb = numpy_backend.train_epochs(*args)
    assert (ea, ba) == (eb, bb) == (-1, -1)
    assert np.abs(va - vb).max() < 1e-10
    np.testing.assert_allclose(la, lb, rtol=1e-10)


@needs_numba
def test_train_epochs_cross_backend_with_dropout():
    nb = get_backend("numba")
    cfg, p, ds = problem(seed=4, sizes=(3, 12, 3))
    args = train_args(cfg, p, ds, dropout=0.4)
    va, *_ = nb.train_epochs(*args)
    vb, *_ = numpy_backend.train_epochs(*args)
    assert np.abs(va - vb).max() < 1e-10


@pytest.mark.parametrize("name", BACKENDS)
def test_train_epochs_bit_deterministic_within_backend(name):
    be = get_backend(name)
    cfg, p, ds = problem(seed=6)
    args = train_args(cfg, p, ds)
    va, *_ = be.train_epochs(*args)
    vb, *_ = be.train_epochs(*args)
    assert np.array_equal(va, vb)


@pytest.mark.parametrize("name", BACKENDS)
def test_divergence_flag_reports_location(name):
    be = get_backend(name)
    cfg, p, ds = problem(seed=7, sizes=(3, 6, 3))
    args = list(train_args(cfg, p, ds, epochs=8, batch=4, lr=1e30, opt=0))
    values, losses, e, b = be.train_epochs(*args)
    assert e >= 0 and b >= 0  # blew up and said where


@pytest.mark.parametrize("name", BACKENDS)
def test_inputs_not_mutated(name):
    be = get_backend(name)
    cfg, p, ds = problem(seed=8)
    args = train_args(cfg, p, ds)
    before = args[0].copy()
    be.train_epochs(*args)
    assert np.array_equal(args[0], before)


def test_numpy_loss_floor_matches_constant():
    assert numpy_backend.PROB_FLOOR == 1e-12
    assert numpy_backend.LOGIT_CLAMP == 500.0
