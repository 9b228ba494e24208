#!/usr/bin/env python3
"""Time the numba kernels against the vectorized numpy fallback.

Runs each kernel on two problem sizes: the small desk-scale net the
test suite trains, and a wider layer stack where the matmuls dominate.
First call per backend includes JIT compilation; warmup reps absorb it.

    python3 benchmarks/bench_backends.py
"""

import statistics
import time

import numpy as np

from dua_d2c.data import gen_synthetic
from dua_d2c.kernels import BACKENDS, get_backend
from dua_d2c.models import MLPConfig, init_params

WARMUP = 3
REPS = 10


def build_problem(sizes, n, seed=0):
    cfg = MLPConfig(layer_sizes=sizes, seed=seed)
    p = init_params(cfg)
    ds = gen_synthetic(n, sizes[0], sizes[-1], class_sep=1.5, seed=seed)
    gen = np.random.default_rng(seed + 1)
    epochs = 5
    orders = np.empty((epochs, n), dtype=np.int64)
    for e in range(epochs):
        orders[e] = gen.permutation(n)
    drop_u = np.zeros((1, 1, 1))
    train = (
        p.values, cfg.sizes_array(), ds.features, ds.labels, orders,
        32, 0.01, 1, 0.9, 0.999, 1e-8, 0.0, drop_u,
    )
    return cfg, p, ds, train


def timeit(f):
    for _ in range(WARMUP):
        f()
    timings = []
    for _ in range(REPS):
        start = time.perf_counter()
        f()
        timings.append(time.perf_counter() - start)
    return statistics.median(timings), statistics.mean(timings), statistics.stdev(timings)


def main():
    problems = [
        ("desk 240x(2,100,100,100,2)", build_problem((2, 100, 100, 100, 2), 240)),
        ("wide 2048x(20,256,128,10)", build_problem((20, 256, 128, 10), 2048)),
    ]
    print(f"backends: {', '.join(BACKENDS)}")
    print("problem\tkernel\tbackend\tmedian_s\tmean_s\tstdev_s")
    for label, (cfg, p, ds, train) in problems:
        medians = {}
        for name in BACKENDS:
            be = get_backend(name)
            kernels = [
                ("forward_probs", lambda be=be: be.forward_probs(
                    p.values, cfg.sizes_array(), ds.features)),
                ("loss_and_grad", lambda be=be: be.loss_and_grad(
                    p.values, cfg.sizes_array(), ds.features, ds.labels)),
                ("train_epochs_x5", lambda be=be: be.train_epochs(*train)),
            ]
            for kname, f in kernels:
                med, mean, stdev = timeit(f)
                medians[(kname, name)] = med
                print(f"{label}\t{kname}\t{name}\t{med:.6f}\t{mean:.6f}\t{stdev:.6f}",
                      flush=True)
        if len(BACKENDS) == 2:
            for kname in ("forward_probs", "loss_and_grad", "train_epochs_x5"):
                ratio = medians[(kname, "numpy")] / medians[(kname, "numba")]
                print(f"{label}\t{kname}\tnumpy/numba\t{ratio:.2f}x", flush=True)


if __name__ == "__main__":
    main()
