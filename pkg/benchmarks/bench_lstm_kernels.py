"""Time the compiled and numpy LSTM kernels on training-sized batches.

Usage: python benchmarks/bench_lstm_kernels.py [--repeats N]
"""

import argparse
import timeit

import numpy as np

from driftbench._kernels import available_backends

SHAPES = [  # (batch, steps, features, hidden)
    (32, 16, 6, 32),
    (32, 16, 6, 64),
    (32, 128, 52, 64),
    (1, 16, 6, 32),
]


def _inputs(b, t, d, s, dtype):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((b, t, d)).astype(dtype)
    w_x = rng.uniform(-0.2, 0.2, (d, 4 * s)).astype(dtype)
    w_h = rng.uniform(-0.2, 0.2, (s, 4 * s)).astype(dtype)
    bias = rng.uniform(-0.2, 0.2, 4 * s).astype(dtype)
    dhs = rng.standard_normal((b, t, s)).astype(dtype)
    return x, w_x, w_h, bias, dhs


def bench(module, shape, dtype, repeats):
    x, w_x, w_h, bias, dhs = _inputs(*shape, dtype)
    hs, gates, cs = module.lstm_forward(x, w_x, w_h, bias)

    def fwd():
        module.lstm_forward(x, w_x, w_h, bias)

    def bwd():
        module.lstm_backward(dhs, x, w_x, w_h, hs, gates, cs)

    number = max(1, 2000 // (shape[0] * shape[1]))
    f = min(timeit.repeat(fwd, number=number, repeat=repeats)) / number
    b = min(timeit.repeat(bwd, number=number, repeat=repeats)) / number
    return f, b


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    backends = available_backends()
    print(f"backends: {', '.join(backends)}")
    print(f"{'shape (B,T,D,S)':<20}{'dtype':<9}" + "".join(f"{n + ' fwd/bwd (us)':>28}" for n in backends)
          + ("   speedup" if len(backends) > 1 else ""))
    for shape in SHAPES:
        for dtype in (np.float32, np.float64):
            times = {n: bench(m, shape, dtype, args.repeats) for n, m in backends.items()}
            row = f"{str(shape):<20}{np.dtype(dtype).name:<9}"
            row += "".join(f"{f * 1e6:>16.1f} / {b * 1e6:>9.1f}" for f, b in times.values())
            if "cython" in times:
                py, cy = times["python"], times["cython"]
                row += f"   {(py[0] + py[1]) / (cy[0] + cy[1]):5.2f}x"
            print(row)


if __name__ == "__main__":
    main()
