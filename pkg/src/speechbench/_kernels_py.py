"""Pure-Python twins of the compiled kernels.

Same arithmetic, same operation order as ``_kernels.pyx`` so results agree
to the last bit; only the speed differs.
"""

import math

import numpy as np


def biquad_cascade(x, sos):
    """Filter `x` through a cascade of biquad sections.

    Each row of `sos` is (b0, b1, b2, a0, a1, a2); sections are applied in
    order using the direct form II transposed recurrence.
    """
    out = np.array(x, dtype=np.float64, copy=True)
    sos = np.asarray(sos, dtype=np.float64)
    n = out.shape[0]
    buf = out.tolist()
    for s in range(sos.shape[0]):
        b0, b1, b2, a0, a1, a2 = sos[s]
        b0, b1, b2, a1, a2 = b0 / a0, b1 / a0, b2 / a0, a1 / a0, a2 / a0
        z1 = 0.0
        z2 = 0.0
        for i in range(n):
            xi = buf[i]
            yi = b0 * xi + z1
            z1 = b1 * xi - a1 * yi + z2
            z2 = b2 * xi - a2 * yi
            buf[i] = yi
    return np.asarray(buf, dtype=np.float64)


def goertzel_power(x, norm_freq):
    """Squared magnitude of the DFT of `x` at `norm_freq` cycles/sample."""
    coeff = 2.0 * math.cos(2.0 * math.pi * float(norm_freq))
    s1 = 0.0
    s2 = 0.0
    for xi in np.asarray(x, dtype=np.float64).tolist():
        s0 = xi + coeff * s1 - s2
        s2 = s1
        s1 = s0
    return s1 * s1 + s2 * s2 - coeff * s1 * s2
