"""Benchmark the compiled kernels against the pure-Python fallback.

Times the element-level kernels at the array sizes that dominate training
(small activation matrices), plus one full loss + backward pass of the
model, under each backend. Run from a checkout with the package
installed:

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from hyvae import backend
from hyvae.model import HyVaeConfig, HyVaeModel
from hyvae.rng import Rng


def _time(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_kernels(repeat: int):
    rng = np.random.default_rng(0)
    shapes = [(3, 1), (32, 64), (128, 128)]
    rows = []
    for shape in shapes:
        x = rng.normal(size=shape)
        y = rng.normal(size=shape)
        col = rng.normal(size=(shape[0], 1))
        for op_name, call in [
            ("tanh", lambda k: k.tanh(x)),
            ("sigmoid", lambda k: k.sigmoid(x)),
            ("softplus", lambda k: k.softplus(x)),
            ("mul", lambda k: k.mul(x, y)),
            ("add broadcast", lambda k: k.add(x, col)),
            ("sum_to column", lambda k: k.sum_to(x, (shape[0], 1))),
        ]:
            timings = {}
            for name in ("python", "compiled"):
                k = backend.get(name)
                inner = 1000
                timings[name] = _time(
                    lambda: [call(k) for _ in range(inner)], repeat) / inner
            rows.append((f"{op_name} {shape[0]}x{shape[1]}",
                         timings["python"], timings["compiled"]))
    return rows


def bench_model_step(repeat: int):
    config = HyVaeConfig(l=10, L=4, d_z=32, d_h=32, n=1, m=50,
                         warmup_epochs=30, seed=0)
    window = np.random.default_rng(1).uniform(size=(50, 64))
    target = np.random.default_rng(2).uniform(size=(1, 64))

    rows = []
    timings = {}
    for name in ("python", "compiled"):
        backend.use(name)
        model = HyVaeModel(config)

        def step():
            loss, _ = model.loss(window, target, Rng(5), beta=1.0)
            model.zero_grad()
            loss.backward()

        step()                          # warm caches before timing
        timings[name] = _time(step, repeat)
    rows.append(("model loss+backward m=50 l=10 L=4 d=32 batch=64",
                 timings["python"], timings["compiled"]))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5,
                        help="timing repetitions, best-of (default: 5)")
    args = parser.parse_args()

    if not backend.COMPILED_AVAILABLE:
        raise SystemExit("compiled kernels are not available in this install")
    previous = backend.active_name()
    try:
        rows = bench_kernels(args.repeat) + bench_model_step(args.repeat)
    finally:
        backend.use(previous)

    width = max(len(r[0]) for r in rows)
    print(f"{'case'.ljust(width)}  {'python':>12}  {'compiled':>12}  {'speedup':>8}")
    for case, py, comp in rows:
        print(f"{case.ljust(width)}  {py * 1e6:>10.2f}us  {comp * 1e6:>10.2f}us  "
              f"{py / comp:>7.2f}x")


if __name__ == "__main__":
    main()
