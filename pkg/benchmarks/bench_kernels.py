#!/usr/bin/env python3
"""Benchmark the compiled kernel core against the pure-NumPy fallback.

Times the elementwise fusion kernels at training-realistic array sizes and a
macro step (one loss+gradient evaluation), under each available backend.

Usage:
    python benchmarks/bench_kernels.py [--repeats 200] [--sizes 256x8,4096x64]
"""

import argparse
import time

import numpy as np

from pwvqa import backend, model
from pwvqa.fusion import FusionConfig


def _time(fn, repeats):
    fn()  # warm-up
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def bench_kernels(shape, repeats):
    rng = np.random.default_rng(0)
    zq, zv, zk = rng.normal(scale=3.0, size=(3, *shape))
    rows = []
    for name in ("ea_forward", "ea_backward", "sum_forward", "hm_forward", "sigmoid"):
        per_backend = {}
        for impl in backend.available_backends():
            backend.set_backend(impl)
            if name == "sigmoid":
                fn = lambda: backend.sigmoid(zq)
            elif name.startswith("ea"):
                fn = lambda f=getattr(backend, name): f(zq, zv, zk, 1.5, 5e-11)
            else:
                fn = lambda f=getattr(backend, name): f(zq, zv, zk)
            per_backend[impl] = _time(fn, repeats)
        rows.append((name, per_backend))
    return rows


def bench_macro_step(repeats):
    rng = np.random.default_rng(1)
    params = model.init_params(16, 16, 8, 64, rng)
    qf = rng.normal(size=(256, 16))
    vf = rng.normal(size=(256, 16))
    labels = rng.integers(0, 8, size=256)
    cfg = FusionConfig()
    per_backend = {}
    for impl in backend.available_backends():
        backend.set_backend(impl)
        per_backend[impl] = _time(
            lambda: model.loss_final(qf, vf, labels, params, 0.1, cfg), max(repeats // 4, 1)
        )
    return [("loss_final (256x8 batch)", per_backend)]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    parser.add_argument("--sizes", default="256x8,4096x64",
                        help="comma-separated HxW kernel array sizes")
    args = parser.parse_args()

    available = backend.available_backends()
    print(f"backends: {', '.join(available)}")
    if "c" not in available:
        print("note: compiled core not built; timing the fallback only")

    previous = backend.active_backend()
    try:
        for size in args.sizes.split(","):
            shape = tuple(int(x) for x in size.split("x"))
            print(f"\nkernel arrays {shape}:")
            for name, per in bench_kernels(shape, args.repeats):
                line = f"  {name:<14s}"
                for impl in available:
                    line += f" {impl}: {per[impl] * 1e6:9.1f} us"
                if "c" in per and "py" in per:
                    line += f"   speedup x{per['py'] / per['c']:.1f}"
                print(line)

        print("\nmacro:")
        for name, per in bench_macro_step(args.repeats):
            line = f"  {name:<24s}"
            for impl in available:
                line += f" {impl}: {per[impl] * 1e6:9.1f} us"
            if "c" in per and "py" in per:
                line += f"   speedup x{per['py'] / per['c']:.2f}"
            print(line)
    finally:
        backend.set_backend(previous)


if __name__ == "__main__":
    main()
