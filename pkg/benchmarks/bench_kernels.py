"""Compare the compiled DSP kernels against the pure-Python fallbacks.

Run:  python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from speechbench import _kernels_py, kernels
from speechbench.dsp import design_notch


def _time(fn, *args, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    if not kernels.HAVE_COMPILED:
        print("compiled extension not available; benchmarking fallback against itself")
    rng = np.random.default_rng(0)
    rows = []

    for seconds, sections in ((1, 1), (1, 5), (10, 5), (30, 5)):
        x = np.ascontiguousarray(rng.standard_normal(seconds * 16_000))
        sos = np.ascontiguousarray(
            np.stack([design_notch(300.0 * (i + 1), 16_000, 30.0) for i in range(sections)])
        )
        t_c = _time(kernels.biquad_cascade, x, sos)
        t_py = _time(_kernels_py.biquad_cascade, x, sos, repeats=1)
        rows.append((f"biquad {seconds:>2}s x{sections}", t_c, t_py))

    for seconds in (1, 10, 30):
        x = np.ascontiguousarray(rng.standard_normal(seconds * 16_000))
        t_c = _time(kernels.goertzel_power, x, 0.05)
        t_py = _time(_kernels_py.goertzel_power, x, 0.05, repeats=1)
        rows.append((f"goertzel {seconds:>2}s", t_c, t_py))

    print(f"{'kernel':<18} {'compiled':>12} {'pure':>12} {'speedup':>9}")
    for name, t_c, t_py in rows:
        print(f"{name:<18} {t_c * 1e3:>10.2f}ms {t_py * 1e3:>10.2f}ms {t_py / t_c:>8.1f}x")


if __name__ == "__main__":
    main()
