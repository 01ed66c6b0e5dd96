"""Timing of the compiled kernels against the pure-Python fallback."""
import time

import numpy as np

from . import kernels


def _cases(rng):
    n, d = 200_000, 8
    values = rng.integers(0, d, n)
    u1 = rng.random(n)
    u2 = rng.random((20_000, d))
    X = rng.normal(size=(20, 4))
    trees, psi, limit = 100, 16, 4
    samples = np.stack([rng.choice(20, psi, replace=False) for _ in range(trees)])
    u3 = rng.random((trees, 2 * (2**limit - 1)))
    p, q = np.e / (np.e + d - 1), 1 / (np.e + d - 1)
    return {
        "krr_perturb n=2e5": lambda b: kernels.krr_perturb(values, u1, p, q, d, backend=b),
        "oue_perturb n=2e4": lambda b: kernels.oue_perturb(values[:20_000], u2, 0.5, 0.27,
                                                           backend=b),
        "iforest 100 trees": lambda b: kernels.iforest_path_lengths(X, samples, u3, limit,
                                                                    backend=b),
    }


def _best(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def run_benchmark(repeats=5, seed=0):
    """Print best-of-repeats timings per kernel and backend; returns the rows."""
    rng = np.random.default_rng(seed)
    backends = ["python"] + (["cython"] if kernels.compiled_backend is not None else [])
    rows = []
    for name, fn in _cases(rng).items():
        outputs = {b: fn(b) for b in backends}
        same = all(np.array_equal(outputs["python"], outputs[b]) for b in backends)
        times = {b: _best(lambda: fn(b), repeats) for b in backends}
        speedup = times["python"] / times["cython"] if "cython" in times else float("nan")
        rows.append((name, times.get("python"), times.get("cython"), speedup, same))
        cy = f"{times['cython'] * 1e3:9.3f}" if "cython" in times else "      n/a"
        print(f"{name:22s} python {times['python'] * 1e3:9.3f} ms  cython {cy} ms  "
              f"speedup {speedup:7.1f}x  identical={same}")
    return rows
