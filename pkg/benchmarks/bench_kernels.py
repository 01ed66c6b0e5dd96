"""Compiled vs pure-Python kernel timings: python benchmarks/bench_kernels.py [repeats]."""
import sys

from ldpstream.bench import run_benchmark

if __name__ == "__main__":
    run_benchmark(repeats=int(sys.argv[1]) if len(sys.argv) > 1 else 5)
