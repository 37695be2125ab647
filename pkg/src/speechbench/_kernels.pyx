# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled sample-sequential DSP recurrences.

These two loops cannot be vectorized with numpy (each output depends on
the previous one), so they are the only compiled code in the package.
`speechbench.kernels` picks this module when available and falls back to
`speechbench._kernels_py` otherwise.
"""

from libc.math cimport cos, M_PI

import numpy as np


def biquad_cascade(double[::1] x, double[:, ::1] sos):
    """Filter `x` through a cascade of biquad sections.

    Each row of `sos` is (b0, b1, b2, a0, a1, a2); sections are applied in
    order using the direct form II transposed recurrence.
    """
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t nsec = sos.shape[0]
    out_arr = np.array(x, dtype=np.float64, copy=True)
    cdef double[::1] out = out_arr
    cdef double b0, b1, b2, a1, a2, a0, z1, z2, xi, yi
    cdef Py_ssize_t i, s
    for s in range(nsec):
        a0 = sos[s, 3]
        b0 = sos[s, 0] / a0
        b1 = sos[s, 1] / a0
        b2 = sos[s, 2] / a0
        a1 = sos[s, 4] / a0
        a2 = sos[s, 5] / a0
        z1 = 0.0
        z2 = 0.0
        for i in range(n):
            xi = out[i]
            yi = b0 * xi + z1
            z1 = b1 * xi - a1 * yi + z2
            z2 = b2 * xi - a2 * yi
            out[i] = yi
    return out_arr


def goertzel_power(double[::1] x, double norm_freq):
    """Squared magnitude of the DFT of `x` at `norm_freq` cycles/sample."""
    cdef Py_ssize_t n = x.shape[0]
    cdef double coeff = 2.0 * cos(2.0 * M_PI * norm_freq)
    cdef double s0, s1 = 0.0, s2 = 0.0
    cdef Py_ssize_t i
    for i in range(n):
        s0 = x[i] + coeff * s1 - s2
        s2 = s1
        s1 = s0
    return s1 * s1 + s2 * s2 - coeff * s1 * s2
