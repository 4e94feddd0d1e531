"""Throughput of the compiled kernel against the NumPy fallback.

Run with ``python3 benchmarks/bench_kernels.py [pairs]``.  Random inputs are
generated once, so the timings isolate the per-pair work (position mapping,
pixel lookup and outcome draw).
"""

import sys
import timeit

import numpy as np

from ancilla_moments import kernels
from ancilla_moments.acquisition import run_direct
from ancilla_moments.gstate import from_table_variances
from ancilla_moments.optics import LensSystem, SlmPanel, synthesize_mask


def main(n=1_000_000, repeat=5):
    panel = SlmPanel()
    ma, mb = synthesize_mask(panel, 1, 0), synthesize_mask(panel, 2, 0)
    rng = np.random.default_rng(0)
    z = rng.standard_normal((n, 4))
    v = rng.random(n)
    mean = np.zeros(4)
    factor = np.ascontiguousarray(np.diag([0.13, 0.13, 0.14, 0.14]))
    args = (z, v, mean, factor, ma.cos_map(), mb.cos_map(), panel.half_width_px, 0.0, 1.0, 0.0, 1.0, 0.0, [1, 0, 1, 0])
    print(f"kernel only, {n:,} pairs (best of {repeat}):")
    best = {}
    for name in kernels.available_backends():
        t = min(timeit.repeat(lambda: kernels.direct_counts(*args, backend=name), number=1, repeat=repeat))
        best[name] = t
        print(f"  {name:9s} {t * 1e3:8.1f} ms   {n / t / 1e6:6.1f} M pairs/s")
    if len(best) == 2:
        print(f"  speed-up {best['python'] / best['compiled']:.1f}x")

    state = from_table_variances((0.0193, 0.021, 0.060, 0.015), (359, 398, 1.64, 1419))
    lens = LensSystem.imaging_chain([30, 50, 20, 50])
    print(f"run_direct end to end, {n:,} pairs (includes random number generation):")
    for name in kernels.available_backends():
        t = min(timeit.repeat(lambda: run_direct(state, (ma, mb), (lens, lens), T=n, seed=1, backend=name),
                              number=1, repeat=max(1, repeat // 2)))
        print(f"  {name:9s} {t * 1e3:8.1f} ms")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 1_000_000)
