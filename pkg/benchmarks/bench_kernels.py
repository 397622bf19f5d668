"""Time the compiled sampling kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--trials N] [--outcomes R] [--repeat K]

Both backends get the same seed, so the script also checks that they return
identical counts.
"""

import argparse
import sys
import time

import numpy as np

from dpselect import _kernels_py

try:
    from dpselect import _kernels
except ImportError:
    _kernels = None

KINDS = {
    "laplace": _kernels_py.LAPLACE,
    "student_t": _kernels_py.STUDENT_T,
    "lln": _kernels_py.LLN,
    "gumbel": _kernels_py.GUMBEL,
    "exponential": _kernels_py.EXPONENTIAL,
}


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=10**6)
    ap.add_argument("--outcomes", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    if _kernels is None:
        print("compiled extension not built; only the fallback is available", file=sys.stderr)
        return 1

    u = np.linspace(0.0, 1.0, args.outcomes)
    accept = np.exp(-np.arange(args.outcomes) / 4.0)
    cases = [
        (name, lambda mod, code=code: mod.noisy_max_counts(u, 0.7, code, args.trials, np.random.default_rng(1)))
        for name, code in KINDS.items()
    ]
    cases.append(("permute_and_flip", lambda mod: mod.pf_counts(accept, args.trials, np.random.default_rng(1))))

    print(f"{'kernel':<18}{'compiled s':>12}{'python s':>12}{'speedup':>10}  identical")
    for name, run in cases:
        tc, oc = best_of(lambda: run(_kernels), args.repeat)
        tp, op = best_of(lambda: run(_kernels_py), args.repeat)
        same = np.array_equal(oc, op)
        print(f"{name:<18}{tc:>12.4f}{tp:>12.4f}{tp / tc:>10.2f}  {same}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
