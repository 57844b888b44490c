"""Time the numba kernels against their pure-numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5] [--size 48]

Each kernel runs once untimed (JIT warm-up), then ``--repeat`` times; the
best wall time is reported along with the max absolute difference between the
two backends.
"""
import argparse
import time

import numpy as np

from nervequery import _accel, _kernels


def best_of(fn, args, repeat):
    fn(*args)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def max_diff(a, b):
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a, float), np.asarray(b, float)
    same_inf = np.isinf(a) & (a == b)
    return float(np.abs(np.where(same_inf, 0.0, a - b)).max()) if a.size else 0.0


def cases(size, rng):
    n = size
    lines = rng.uniform(0, 100, size=(n * n, n))
    lines[rng.random(lines.shape) < 0.7] = np.inf

    dims = np.array([n // 2] * 3)
    inside = np.zeros(tuple(dims), bool)
    c = n // 4
    inside[c - 2:c + 2, c - 2:c + 2, c - 2:c + 2] = True
    aff = np.diag([1.0, 1.0, 1.0, 1.0])
    refs = np.argwhere(inside).astype(float)
    u = np.array([0.0, 1.0, 0.0])

    plane = rng.uniform(0, 50, size=(n, n, n))
    plane[rng.random(plane.shape) < 0.5] = np.inf

    vol = rng.random((n, n, n))
    coords = rng.uniform(0, n - 1, size=(200_000, 3))

    lens = rng.integers(20, 60, size=2000)
    vals = rng.random((4, int(lens.sum())))
    vals[rng.random(vals.shape) < 0.3] = 0.0
    offsets = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)
    tau = np.full(4, 0.5)

    return {
        "edt_pass": (lines, 1.0),
        "directional_cos": (dims, aff, inside, refs, u, np.inf),
        "directional_sliced": (plane, 1.0),
        "sample_trilinear": (vol, coords),
        "partition_batch": (vals, offsets, tau, 2),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=48, help="edge length of the test volumes")
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba backend unavailable (not installed or NERVEQUERY_DISABLE_NUMBA set)")
    rng = np.random.default_rng(0)
    print(f"threads: {_accel.set_threads(None)}")
    print(f"{'kernel':<20} {'numba s':>10} {'numpy s':>10} {'speedup':>8} {'max diff':>10}")
    for name, kargs in cases(args.size, rng).items():
        t_nb, out_nb = best_of(_kernels.NUMBA_KERNELS[name], kargs, args.repeat)
        t_np, out_np = best_of(_kernels.NUMPY_KERNELS[name], kargs, args.repeat)
        print(f"{name:<20} {t_nb:>10.4f} {t_np:>10.4f} {t_np / t_nb:>7.1f}x {max_diff(out_nb, out_np):>10.2e}")


if __name__ == "__main__":
    main()
