#!/usr/bin/env python3
"""Benchmark the numba-jitted kernels against their pure-numpy fallbacks.

Run a couple of times: the first invocation pays numba's compile cost (the
compiled functions are disk-cached afterwards).  `PHONEPOOL_NO_NUMBA=1`
selects the numpy path package-wide; this script times both variants
explicitly regardless of the flag.
"""

import time

import numpy as np

from phonepool import kernels
from phonepool.accel import HAVE_NUMBA


def timeit(fn, *args, repeat=20):
    fn(*args)  # warm-up / compile
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def bench_segment_sums(T=100_000, dims=40, run_len=8):
    rng = np.random.default_rng(0)
    data = rng.standard_normal((T, dims))
    starts = np.arange(0, T, run_len, dtype=np.int64)
    ends = np.minimum(starts + run_len - 1, T - 1)
    t_np = timeit(kernels.segment_sums_np, data, starts, ends)
    rows = [("segment_sums", "numpy", t_np, 1.0)]
    if HAVE_NUMBA:
        t_nb = timeit(kernels.segment_sums_nb, data, starts, ends)
        rows.append(("segment_sums", "numba", t_nb, t_np / t_nb))
        a = kernels.segment_sums_np(data, starts, ends)
        b = kernels.segment_sums_nb(data, starts, ends)
        assert np.abs(a - b).max() < 1e-9
    return rows


def bench_lstm(T=1000, d_in=40, hidden=128, tag=""):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((T, d_in))
    w_x = rng.standard_normal((d_in, 4 * hidden)) * 0.1
    w_h = rng.standard_normal((hidden, 4 * hidden)) * 0.1
    b = np.zeros(4 * hidden)
    mask = np.ones(hidden)
    xz = x @ w_x + b
    z = np.zeros(hidden)
    fwd = f"lstm_fwd{tag}"
    bwd = f"lstm_bwd{tag}"
    rows = []
    t_np = timeit(kernels.lstm_forward_np, xz, w_h, z, z, mask, repeat=5)
    rows.append((fwd, "numpy", t_np, 1.0))
    h, c, gates, hm = kernels.lstm_forward_np(xz, w_h, z, z, mask)
    dh = rng.standard_normal((T, hidden))
    w_h_t = np.ascontiguousarray(w_h.T)
    t_np_b = timeit(kernels.lstm_backward_np, dh, gates, c, z, w_h_t, mask, repeat=5)
    rows.append((bwd, "numpy", t_np_b, 1.0))
    if HAVE_NUMBA:
        t_nb = timeit(kernels.lstm_forward_nb, xz, w_h, z, z, mask, repeat=5)
        rows.append((fwd, "numba", t_nb, t_np / t_nb))
        t_nb_b = timeit(kernels.lstm_backward_nb, dh, gates, c, z, w_h_t, mask,
                        repeat=5)
        rows.append((bwd, "numba", t_nb_b, t_np_b / t_nb_b))
        a = kernels.lstm_forward_np(xz, w_h, z, z, mask)[0]
        b2 = kernels.lstm_forward_nb(xz, w_h, z, z, mask)[0]
        assert np.abs(a - b2).max() < 1e-9
    return rows


def main():
    if not HAVE_NUMBA:
        print("numba not importable: numpy paths only")
    rows = bench_segment_sums()
    rows += bench_lstm(T=50, d_in=40, hidden=48, tag="@toy")
    rows += bench_lstm(T=1000, d_in=40, hidden=128, tag="@large")
    print(f"{'kernel':16s} {'path':6s} {'per call':>12s} {'speedup':>8s}")
    for name, path, t, speedup in rows:
        print(f"{name:16s} {path:6s} {t * 1e3:9.3f} ms {speedup:7.1f}x")


if __name__ == "__main__":
    main()
