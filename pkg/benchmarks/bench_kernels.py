"""Compare the compiled and pure-numpy conv/pool kernels.

    python3 benchmarks/bench_kernels.py [--repeat N]

Also times one full training step of the image model under each backend.
"""

import argparse
import time

import numpy as np

from bayescope import kernels
from bayescope.models import ModelSpec, build


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(rng):
    x = rng.normal(size=(64, 16, 16, 1))
    k0 = rng.normal(size=(3, 3, 1, 8))
    h = rng.normal(size=(64, 7, 7, 8))
    k1 = rng.normal(size=(3, 3, 8, 16))
    g0 = rng.normal(size=(64, 14, 14, 8))
    g1 = rng.normal(size=(64, 5, 5, 16))
    return {
        "conv fwd 16x16x1->8": lambda impl: kernels.conv2d_forward(x, k0, 1, impl=impl),
        "conv fwd 7x7x8->16": lambda impl: kernels.conv2d_forward(h, k1, 1, impl=impl),
        "conv dK 16x16x1->8": lambda impl: kernels.conv2d_backward_kernel(x, g0, 3, 3, 1, impl=impl),
        "conv dX 7x7x8->16": lambda impl: kernels.conv2d_backward_input(g1, k1, 7, 7, 1, impl=impl),
        "pool fwd 14x14x8": lambda impl: kernels.mean_pool_forward(g0, 2, impl=impl),
        "pool bwd 14x14x8": lambda impl: kernels.mean_pool_backward(h, 14, 14, 2, impl=impl),
    }


def train_step_time(backend, repeat):
    """Best time of one forward+backward pass of the image bcnn_sigma on a batch of 64."""
    from bayescope import autodiff as ad

    model = build(ModelSpec(variant="bcnn_sigma", input_kind="image", seed=0))
    rng = np.random.default_rng(0)
    x, y = rng.uniform(size=(64, 16, 16, 1)), rng.normal(size=64)

    def step():
        model.zero_grad()
        ad.backward(model.loss(x, y, "sample", 0.1, rng).total)

    prev = kernels.set_backend(backend)
    try:
        return best_of(step, repeat)
    finally:
        kernels.set_backend(prev)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    print(f"default backend: {kernels.BACKEND}; available: {', '.join(sorted(backends))}")
    rng = np.random.default_rng(0)
    names = sorted(backends)
    print(f"{'case':<24}" + "".join(f"{n + ' (ms)':>16}" for n in names) + f"{'speedup':>10}")
    for case, fn in kernel_cases(rng).items():
        t = {n: best_of(lambda: fn(backends[n]), args.repeat) * 1e3 for n in names}
        speed = t["python"] / t["cython"] if "cython" in t else float("nan")
        print(f"{case:<24}" + "".join(f"{t[n]:>16.3f}" for n in names) + f"{speed:>9.1f}x")
    t = {n: train_step_time(n, max(3, args.repeat // 4)) * 1e3 for n in names}
    speed = t["python"] / t["cython"] if "cython" in t else float("nan")
    print(f"{'image train step':<24}" + "".join(f"{t[n]:>16.3f}" for n in names) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
