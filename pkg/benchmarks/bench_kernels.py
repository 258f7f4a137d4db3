#!/usr/bin/env python3
"""Time the numba kernels against their pure-numpy fallbacks.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats 50] [--rows 4096] [--width 512]

Each kernel is timed on identical inputs through both paths; the table
reports per-call times and the numba speedup. Run with PRETRAINKIT_NUMBA=0
to confirm the numpy path is what the flag selects at import time.
"""

import argparse
import timeit

import numpy as np

from pretrainkit import kernels


def bench(fn, args, repeats):
    fn(*args)  # warm-up (numba compiles here)
    timer = timeit.Timer(lambda: fn(*args))
    return min(timer.repeat(repeat=3, number=repeats)) / repeats


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=50)
    parser.add_argument("--rows", type=int, default=4096)
    parser.add_argument("--width", type=int, default=512)
    args = parser.parse_args()

    n, v = args.rows, args.width
    rng = np.random.default_rng(0)
    x = np.ascontiguousarray(rng.uniform(-3, 3, (n, v)))
    dy = np.ascontiguousarray(rng.uniform(-1, 1, (n, v)))
    gamma = rng.uniform(0.5, 1.5, v)
    beta = rng.uniform(-1, 1, v)
    labels = rng.integers(0, v, n).astype(np.int64)
    labels[::7] = -1
    softmax_y = kernels.softmax2d_numpy(x)
    _, mean, rstd = kernels.layer_norm_numpy(x, gamma, beta, 1e-5)[0:3]
    _, count, probs = kernels.cross_entropy_numpy(x, labels, -1)
    param = rng.uniform(-1, 1, (n, v))
    grad = rng.uniform(-1, 1, (n, v))
    m = np.zeros((n, v))
    vv = np.zeros((n, v))
    ids = rng.integers(0, n, 8 * n).astype(np.int64)
    dout = np.ascontiguousarray(rng.uniform(-1, 1, (8 * n, 64)))
    dtable = np.zeros((n, 64))

    cases = [
        ("softmax2d", kernels.softmax2d_numpy,
         getattr(kernels, "_softmax2d_nb", None), (x,)),
        ("softmax2d_grad", kernels.softmax2d_grad_numpy,
         getattr(kernels, "_softmax2d_grad_nb", None), (dy, softmax_y)),
        ("layer_norm", kernels.layer_norm_numpy,
         getattr(kernels, "_layer_norm_nb", None), (x, gamma, beta, 1e-5)),
        ("layer_norm_grad", kernels.layer_norm_grad_numpy,
         getattr(kernels, "_layer_norm_grad_nb", None),
         (dy, x, gamma, mean, rstd)),
        ("cross_entropy", kernels.cross_entropy_numpy,
         getattr(kernels, "_cross_entropy_nb", None), (x, labels, -1)),
        ("cross_entropy_grad", kernels.cross_entropy_grad_numpy,
         getattr(kernels, "_cross_entropy_grad_nb", None),
         (probs, labels, -1, count, 1.0)),
        ("gelu", kernels.gelu_numpy, getattr(kernels, "_gelu_nb", None), (x,)),
        ("gelu_grad", kernels.gelu_grad_numpy,
         getattr(kernels, "_gelu_grad_nb", None), (dy, x)),
        ("adam_update", kernels.adam_update_numpy,
         getattr(kernels, "_adam_update_nb", None),
         (param, grad, m, vv, 1e-3, 0.9, 0.999, 1e-8, 3)),
        ("embedding_grad", kernels.embedding_grad_numpy,
         getattr(kernels, "_embedding_grad_nb", None), (dtable, ids, dout, 0)),
    ]

    print(f"rows={n} width={v} repeats={args.repeats} "
          f"(numba available: {kernels.HAS_NUMBA})")
    header = f"{'kernel':<20} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, np_fn, nb_fn, case_args in cases:
        t_np = bench(np_fn, case_args, args.repeats) * 1e3
        if nb_fn is None:
            print(f"{name:<20} {t_np:>10.3f} {'-':>10} {'-':>8}")
            continue
        t_nb = bench(nb_fn, case_args, args.repeats) * 1e3
        print(f"{name:<20} {t_np:>10.3f} {t_nb:>10.3f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
