"""Compiled inner loops for orbit iteration and return times.

Map kinds are passed as small integer codes so the kernels stay free of
Python objects; see ``maps.KIND_CODES``.
"""
import numpy as np
from numba import njit

DOUBLING = 0
GAUSS = 1
LSV = 2

# one unit in the last place of numbers in [1/2, 1)
LOW_BIT = 2.0**-53


@njit(cache=True)
def step(kind, gamma, x):
    if kind == DOUBLING:
        y = 2.0 * x
        return y - np.floor(y)
    if kind == GAUSS:
        if x <= 0.0:
            return 0.0
        y = 1.0 / x
        return y - np.floor(y)
    if x < 0.5:
        return x * (1.0 + (2.0 * x) ** gamma)
    return 2.0 * x - 1.0


@njit(cache=True)
def advance(kind, gamma, x, bits, out):
    """Fill ``out`` with the next len(out) iterates after ``x``.

    When ``bits`` is non-empty, bit j is added at 2**-53 after step j.
    """
    jitter = bits.size > 0
    for j in range(out.size):
        x = step(kind, gamma, x)
        if jitter and bits[j]:
            x += LOW_BIT
        out[j] = x
    return x


@njit(cache=True)
def orbit_block(kind, gamma, starts, bits, n):
    count = starts.size
    out = np.empty((count, n))
    empty = np.empty(0, dtype=np.uint8)
    for i in range(count):
        out[i, 0] = starts[i]
        if bits.shape[1] > 0:
            advance(kind, gamma, starts[i], bits[i], out[i, 1:])
        else:
            advance(kind, gamma, starts[i], empty, out[i, 1:])
    return out


@njit(cache=True)
def escape_time(gamma, x, cap):
    """Steps of the LSV map needed to bring ``x`` into [1/2, 1]; -1 past ``cap``."""
    count = 0
    while x < 0.5:
        x = x * (1.0 + (2.0 * x) ** gamma)
        count += 1
        if count > cap:
            return -1
    return count


@njit(cache=True)
def escape_times(gamma, xs, cap):
    out = np.empty(xs.size, dtype=np.int64)
    for i in range(xs.size):
        out[i] = escape_time(gamma, xs[i], cap)
    return out


@njit(cache=True)
def induced_pair(gamma, y1, y2, cap):
    """Iterate two points of [1/2, 1] to their first return.

    Returns (tau1, tau2, F(y1), F(y2), max_{l < tau} |T^l y1 - T^l y2|).
    """
    x1 = y1
    x2 = y2
    widest = abs(x1 - x2)
    tau1 = 0
    tau2 = 0
    for ell in range(1, cap + 1):
        if tau1 == 0:
            x1 = 2.0 * x1 - 1.0 if x1 >= 0.5 else x1 * (1.0 + (2.0 * x1) ** gamma)
        if tau2 == 0:
            x2 = 2.0 * x2 - 1.0 if x2 >= 0.5 else x2 * (1.0 + (2.0 * x2) ** gamma)
        if tau1 == 0 and x1 >= 0.5:
            tau1 = ell
        if tau2 == 0 and x2 >= 0.5:
            tau2 = ell
        if tau1 > 0 and tau2 > 0:
            break
        if tau1 == 0 and tau2 == 0:
            d = abs(x1 - x2)
            if d > widest:
                widest = d
    return tau1, tau2, x1, x2, widest
