"""Compare the compiled and pure-numpy kernel backends.

Times a fused forward+backward pass at the shapes that dominate each
workload (pretraining, inversion, batched sampling) and prints the
speedup.  Run from the repo root:

    python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from plediff.kernels import _numpy, available_backends
from plediff.util import limit_blas_threads


def make_weights(rng, c, w, e, n_blocks):
    return {
        "win": 0.3 * rng.standard_normal((w, 3 * c)),
        "bin": 0.1 * rng.standard_normal(w),
        "wout": 0.3 * rng.standard_normal((c, 3 * w)),
        "bout": 0.1 * rng.standard_normal(c),
        "wf": [0.3 * rng.standard_normal((2 * w, e)) for _ in range(n_blocks)],
        "bf": [0.1 * rng.standard_normal(2 * w) for _ in range(n_blocks)],
        "wc1": [0.2 * rng.standard_normal((w, 3 * w)) for _ in range(n_blocks)],
        "bc1": [0.1 * rng.standard_normal(w) for _ in range(n_blocks)],
        "wc2": [0.2 * rng.standard_normal((w, 3 * w)) for _ in range(n_blocks)],
        "bc2": [0.1 * rng.standard_normal(w) for _ in range(n_blocks)],
    }


def bench(mod, weights, x, e, d, iters, backward=True):
    eps, cache = mod.forward_batch(weights, x, e)
    if backward:
        mod.backward_batch(weights, cache, d)
    t0 = time.perf_counter()
    for _ in range(iters):
        eps, cache = mod.forward_batch(weights, x, e)
        if backward:
            mod.backward_batch(weights, cache, d)
    return (time.perf_counter() - t0) / iters


def main():
    limit_blas_threads(1)
    backends = [("numpy", _numpy)]
    if "compiled" in available_backends():
        from plediff.kernels import _speedups

        backends.append(("compiled", _speedups))
    else:
        print("compiled backend unavailable; timing numpy only")

    rng = np.random.default_rng(0)
    cases = [
        ("pretrain step (B=32, W=64)", 32, 16, 4, 64, 48, 1, True, 200),
        ("pretrain step (B=32, W=128)", 32, 16, 4, 128, 48, 1, True, 100),
        ("inversion step (B=32, W=64)", 32, 16, 4, 64, 48, 1, True, 200),
        ("sampling eval (B=100, W=64, fwd only)", 100, 16, 4, 64, 48, 1, False, 200),
    ]
    print(f"{'case':42s}" + "".join(f"{name:>12s}" for name, _ in backends) + f"{'speedup':>10s}")
    for label, b, h, c, w, e, nb, backward, iters in cases:
        weights = make_weights(rng, c, w, e, nb)
        x = rng.standard_normal((b, h, c))
        ev = rng.standard_normal((b, e))
        d = rng.standard_normal((b, h, c))
        times = [bench(mod, weights, x, ev, d, iters, backward) for _, mod in backends]
        row = f"{label:42s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:9.2f}x"
        print(row)


if __name__ == "__main__":
    main()
