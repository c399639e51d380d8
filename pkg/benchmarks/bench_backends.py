"""Compare the numba and numpy kernel-panel backends.

Times the streaming regularized-kernel matmul (the training hot path) and the
raw panel evaluation for each kernel. Run:

    python benchmarks/bench_backends.py [--n 20000] [--d 8] [--k 8] [--reps 5]

The numba path is warmed before timing so JIT compilation is not measured.
"""

import argparse
import time

import numpy as np

from kernelgp.backends import get_backend
from kernelgp.kernels import KernelType
from kernelgp.kmat import EngineMode, Hyperparams, KernelEngine


def best_of(reps, fn):
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=20000)
    ap.add_argument("--d", type=int, default=8)
    ap.add_argument("--k", type=int, default=8)
    ap.add_argument("--block-size", type=int, default=256)
    ap.add_argument("--reps", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    x = rng.standard_normal((args.n, args.d))
    b = rng.standard_normal((args.n, args.k))
    hp = Hyperparams(l=1.0, f=1.0, s=0.1)

    backends = []
    for name in ("numba", "numpy"):
        try:
            get_backend(name)
            backends.append(name)
        except ImportError:
            print(f"backend {name} unavailable, skipping")

    print(f"n={args.n} d={args.d} k={args.k} block_size={args.block_size} "
          f"(best of {args.reps})\n")
    print(f"{'kernel':<10} {'op':<14} " + " ".join(f"{nm:>12}" for nm in backends)
          + ("      speedup" if len(backends) == 2 else ""))

    for kt in KernelType:
        rows = {"matmul": [], "panel": []}
        for name in backends:
            engine = KernelEngine(
                kt, x, hp, mode=EngineMode.ON_THE_FLY,
                block_size=args.block_size, backend=name,
            )
            engine.matmul(b[:, :1])  # warm the JIT and page in buffers
            rows["matmul"].append(best_of(args.reps, lambda: engine.matmul(b)))

            panel_fn = get_backend(name).KERNEL_PANELS[kt.value]
            out = np.empty((args.block_size, args.n))
            xb = x[: args.block_size]
            panel_fn(xb, x, hp.l, out)
            rows["panel"].append(best_of(args.reps, lambda: panel_fn(xb, x, hp.l, out)))

        for op, times in rows.items():
            line = f"{kt.value:<10} {op:<14} " + " ".join(f"{t * 1e3:>10.1f}ms" for t in times)
            if len(times) == 2:
                line += f"   {times[1] / times[0]:>8.2f}x"
            print(line)


if __name__ == "__main__":
    main()
