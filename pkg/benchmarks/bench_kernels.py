"""Time the compiled and pure-Python kernels on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--hours 2]
"""

import argparse
import time

import numpy as np

from predscale import kernels
from predscale.trace import synth_diurnal
from predscale.simcore import request_counts


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--hours", type=float, default=2.0, help="simulated workload length")
    ap.add_argument("--css-n", type=int, default=20000, help="series length for the CSS recursion")
    args = ap.parse_args()

    w = synth_diurnal(args.hours / 24, 100, 50, 5, seed=0, start_epoch=36000)
    counts = request_counts(w)
    times = np.array([w.start_epoch, w.start_epoch + 1800.0, w.start_epoch + 3600.0])
    targets = np.array([12, 16, 10], dtype=np.int64)
    z = np.random.default_rng(0).normal(size=args.css_n)
    ar, ma = np.array([0.5, -0.2]), np.array([0.3, 0.1])

    print(f"workload: {int(counts.sum())} arrivals; css series: {args.css_n} samples")
    print(f"{'backend':8s} {'simulate':>10s} {'css':>10s} {'css+jac':>10s}")
    results = {}
    for b in kernels.backends():
        sim = best_of(lambda: b.simulate(counts, w.interval, w.start_epoch, times, targets,
                                         120.0, 0.1, 4, 4000, 1e-7), args.repeat)
        css = best_of(lambda: b.css_residuals(z, ar, ma), args.repeat)
        jac = best_of(lambda: b.css_residuals_jacobian(z, ar, ma), args.repeat)
        results[b.BACKEND] = (sim, css, jac)
        print(f"{b.BACKEND:8s} {sim:10.4f} {css:10.4f} {jac:10.4f}")
    if len(results) == 2:
        py, cy = results["python"], results["cython"]
        print("speedup  " + " ".join(f"{p / c:9.1f}x" for p, c in zip(py, cy)))
    else:
        print("compiled extension not available; only the fallback was timed")


if __name__ == "__main__":
    main()
