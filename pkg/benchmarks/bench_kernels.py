"""Compare the compiled and numpy post-selection kernels.

    python benchmarks/bench_kernels.py [--points N] [--repeat R]

Prints the best wall time per backend and the largest disagreement.
"""

import argparse
import time

import numpy as np

from cvmdi import kernels
from cvmdi.postselect import symmetric_ps_config, two_party_ensemble


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--km", type=float, default=2.0)
    args = ap.parse_args(argv)

    cfg = symmetric_ps_config(args.km, sigma2=1.0)
    ens = two_party_ensemble(cfg)
    rng = np.random.default_rng(0)
    sd = np.sqrt(cfg.sigma2)
    q = np.abs(rng.normal(0.0, sd, (args.points, 2)))
    gamma = np.abs(rng.normal(0.0, np.sqrt(ens.lam + 2 * sd**2), args.points))

    results = {}
    for name in kernels.available_backends():
        t, out = _time(
            lambda: kernels.single_point_terms(q, gamma, ens.coef, ens.lam, ens.overlap_form, backend=name),
            args.repeat,
        )
        results[name] = (t, out)
        print(f"{name:>7}: {t * 1e3:9.1f} ms  ({args.points / t / 1e6:.2f} Mpoints/s)")

    if len(results) == 2:
        (tc, oc), (tp, op) = results["cython"], results["python"]
        diff = max(float(np.max(np.abs(a - b))) for a, b in zip(oc, op))
        print(f"speed-up: {tp / tc:.2f}x   max |difference|: {diff:.2e}")
    else:
        print("compiled backend not built; only the numpy kernel was timed")


if __name__ == "__main__":
    main()
