"""Time the numba kernels against their numpy twins on typical problem sizes.

Run with ``python benchmarks/bench_backends.py [--repeat R]``. Each kernel is
called once untimed so JIT compilation is excluded, then timed ``R`` times;
the best time is reported together with the max abs difference of outputs.
"""
import argparse
import time

import numpy as np

from denstrack import _loops
from denstrack._accel import HAVE_NUMBA


def _best(fn, repeat):
    fn()
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - start)
    return best, out


def _diff(a, b):
    if isinstance(a, tuple):
        return max(_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))


def cases():
    rng = np.random.default_rng(0)

    n = 2048
    h = 16.0 / n
    x = -8.0 + (np.arange(n) + 0.5) * h
    mass = np.exp(-2 * x * x) * h
    mu = x * (1 - 1.0 / 64)
    s = np.full(n, np.sqrt(1.0 / 64))
    yield ("cdf_scatter N=2048", _loops._cdf_scatter_jit, _loops._cdf_scatter_np,
           (mass, mu, s, -8.0, h, n, 8.0))

    m = 2048
    w = rng.random(m)
    yield ("quad_gather_1d N=2048", _loops._quad_gather_1d_jit, _loops._quad_gather_1d_np,
           (w, x.copy(), np.full(m, 0.3), x.copy()))

    side = 48
    g = np.linspace(-3, 3, side)
    pts = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2).copy()
    inv = np.tile([2.0, 0.0, 2.0], (pts.shape[0], 1))
    yield ("quad_gather_2d 48x48", _loops._quad_gather_2d_jit, _loops._quad_gather_2d_np,
           (rng.random(pts.shape[0]), pts, inv, pts))

    key = _loops.seed_key(7)
    yield ("normal_block 1e5 x 128", _loops._normal_block_jit, _loops._normal_block_np,
           (key, 0, 100_000, 128))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba is not installed; both columns time the numpy path")
    print(f"{'kernel':<26}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}{'max diff':>12}")
    for name, jit_fn, np_fn, call_args in cases():
        t_jit, out_jit = _best(lambda: jit_fn(*call_args), args.repeat)
        t_np, out_np = _best(lambda: np_fn(*call_args), args.repeat)
        print(f"{name:<26}{t_jit:>12.4f}{t_np:>12.4f}{t_np / t_jit:>10.1f}{_diff(out_jit, out_np):>12.2e}")


if __name__ == "__main__":
    main()
