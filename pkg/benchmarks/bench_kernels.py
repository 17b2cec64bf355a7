"""Benchmark the compiled extension against the pure-numpy fallback on the
hot kernels (patch gather/scatter and 2x2 max pooling) and on a full
convolution-layer forward pass.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from specmer.kernels import _numpy_backend as python_backend

try:
    from specmer.kernels import _conv_kernels as compiled_backend
except ImportError:
    compiled_backend = None


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_case(name, make_python, make_compiled, repeats):
    py = timeit(make_python, repeats)
    if compiled_backend is None:
        print(f"{name:<34} python {py * 1e3:8.2f} ms   compiled n/a")
        return
    cy = timeit(make_compiled, repeats)
    print(f"{name:<34} python {py * 1e3:8.2f} ms   compiled {cy * 1e3:8.2f} ms"
          f"   speedup {py / cy:5.2f}x")


def conv_forward(backend, x, weights):
    n_filters, c, kh, kw = weights.shape
    cols = backend.im2col(x, kh, kw)
    w2 = weights.transpose(2, 3, 1, 0).reshape(kh * kw * c, n_filters)
    b, p, _ = cols.shape
    out = cols.reshape(b * p, -1) @ w2
    oh = x.shape[1] - kh + 1
    ow = x.shape[2] - kw + 1
    return out.reshape(b, oh, ow, n_filters)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    print(f"compiled extension available: {compiled_backend is not None}\n")

    # shapes mirror the first two stages of a K=129 model
    x1 = rng.standard_normal((16, 129, 129, 1))
    x2 = rng.standard_normal((16, 63, 63, 8))
    w1 = rng.standard_normal((8, 1, 3, 3))
    w2 = rng.standard_normal((16, 8, 3, 3))
    pool_in = rng.standard_normal((16, 127, 127, 8))
    cols2 = rng.standard_normal((16, 61 * 61, 3 * 3 * 8))

    bench_case("im2col 16x129x129x1 k3",
               lambda: python_backend.im2col(x1, 3, 3),
               lambda: compiled_backend.im2col(x1, 3, 3), args.repeats)
    bench_case("im2col 16x63x63x8 k3",
               lambda: python_backend.im2col(x2, 3, 3),
               lambda: compiled_backend.im2col(x2, 3, 3), args.repeats)
    bench_case("col2im 16x61x61 k3 c8",
               lambda: python_backend.col2im(cols2, 63, 63, 8, 3, 3),
               lambda: compiled_backend.col2im(cols2, 63, 63, 8, 3, 3),
               args.repeats)
    bench_case("maxpool2x2 16x127x127x8",
               lambda: python_backend.maxpool2x2(pool_in),
               lambda: compiled_backend.maxpool2x2(pool_in), args.repeats)

    _, arg = python_backend.maxpool2x2(pool_in)
    grad = rng.standard_normal((16, 63, 63, 8))
    bench_case("maxpool backward 16x63x63x8",
               lambda: python_backend.maxpool2x2_backward(grad, arg, 127, 127),
               lambda: compiled_backend.maxpool2x2_backward(grad, arg, 127, 127),
               args.repeats)
    bench_case("conv forward stage 1 (im2col+gemm)",
               lambda: conv_forward(python_backend, x1, w1),
               lambda: conv_forward(compiled_backend, x1, w1), args.repeats)
    bench_case("conv forward stage 2 (im2col+gemm)",
               lambda: conv_forward(python_backend, x2, w2),
               lambda: conv_forward(compiled_backend, x2, w2), args.repeats)


if __name__ == "__main__":
    main()
