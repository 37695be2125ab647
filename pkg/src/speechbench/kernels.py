"""Kernel selection: compiled extension when present, pure Python otherwise.

``HAVE_COMPILED`` records which implementation was picked; both expose the
same functions (`biquad_cascade`, `goertzel_power`) with identical
numerics. ``benchmarks/bench_kernels.py`` compares their speed.
"""

try:
    from speechbench._kernels import biquad_cascade, goertzel_power

    HAVE_COMPILED = True
except ImportError:  # extension not built on this platform
    from speechbench._kernels_py import biquad_cascade, goertzel_power

    HAVE_COMPILED = False

__all__ = ["HAVE_COMPILED", "biquad_cascade", "goertzel_power"]
