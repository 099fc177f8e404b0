#!/usr/bin/env python3
"""Time the numba kernels against the pure-numpy fallbacks.

Run directly: python benchmarks/bench_backends.py [--repeat N]
The numba path is warmed once before timing so compilation is excluded.
"""

import argparse
import time

import numpy as np

from transcov.backend import _numba, _numpy


def _ar(k, r):
    i = np.arange(k)
    return r ** np.abs(i[:, None] - i[None, :]).astype(float)


def _setup(seed=0, n=120, p=100, miss=0.15):
    rng = np.random.default_rng(seed)
    sigma = _ar(n, 0.8)
    delta = _ar(p, 0.6)
    ls, ld = np.linalg.cholesky(sigma), np.linalg.cholesky(delta)
    x = ls @ rng.standard_normal((n, p)) @ ld.T
    mask = rng.uniform(size=(n, p)) > miss
    mask[~mask.any(axis=1)] = True
    for j in np.flatnonzero(~mask.any(axis=0)):
        mask[0, j] = True
    m = np.zeros((n, p))
    return x, mask, m, sigma, np.linalg.inv(sigma), delta, np.linalg.inv(delta)


def bench_glasso(mod, repeat):
    rng = np.random.default_rng(1)
    a = rng.standard_normal((200, 60))
    s = a.T @ a / 200
    best = np.inf
    for _ in range(repeat):
        w = s.copy()
        theta = np.diag(1.0 / (np.diag(s) + 0.2))
        t0 = time.perf_counter()
        mod.glasso_core(s, 0.2, 1e-6, 1e-8, 200, w, theta)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_ace(mod, repeat):
    x, mask, m, sig, sig_i, dl, dl_i = _setup()
    best = np.inf
    for _ in range(repeat):
        values = np.where(mask, x, 0.0)
        t0 = time.perf_counter()
        mod.ace_sweeps(values, mask, m, sig, sig_i, dl, dl_i, 1e-8, 1000)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_rows_fill(mod, repeat):
    x, mask, m, sig, sig_i, dl, dl_i = _setup()
    mu = np.zeros(x.shape[1])
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        mod.rows_conditional_fill(np.where(mask, x, 0.0), mask, mu, dl, dl_i)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_corr(mod, repeat):
    x, mask, *_ = _setup(n=250, p=120)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        mod.pairwise_complete_corr(np.where(mask, x, 0.0), mask, 2)
        best = min(best, time.perf_counter() - t0)
    return best


BENCHES = [
    ("glasso_core      (60 vars)", bench_glasso),
    ("ace_sweeps       (120x100)", bench_ace),
    ("rows_cond_fill   (120x100)", bench_rows_fill),
    ("pairwise_corr    (250x120)", bench_corr),
]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    print("warming numba kernels (compilation excluded from timings)...")
    for _, fn in BENCHES:
        fn(_numba, 1)

    print(f"{'kernel':<28} {'numpy':>10} {'numba':>10} {'speedup':>9}")
    for name, fn in BENCHES:
        t_np = fn(_numpy, args.repeat)
        t_nb = fn(_numba, args.repeat)
        print(f"{name:<28} {t_np * 1e3:>8.2f}ms {t_nb * 1e3:>8.2f}ms "
              f"{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
