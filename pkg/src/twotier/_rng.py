"""Counter-based uniform generator.

Every draw is a pure function of ``(seed, a, b, c)``: a splitmix64 chain over
the four words. There is no generator state, so any trial or request can be
replayed in isolation and the numba, scalar-Python and vectorised numpy
versions below return bit-identical doubles.
"""

import numpy as np

from ._accel import njit

MASK = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


def mix64_py(x):
    x &= MASK
    x = ((x ^ (x >> 30)) * _M1) & MASK
    x = ((x ^ (x >> 27)) * _M2) & MASK
    return x ^ (x >> 31)


def uniform_py(seed, a, b, c):
    a, b, c = int(a), int(b), int(c)  # numpy scalars would overflow below
    h = mix64_py(int(seed))
    h = mix64_py(h ^ ((a + GOLDEN) & MASK))
    h = mix64_py(h ^ ((b + 2 * GOLDEN) & MASK))
    h = mix64_py(h ^ ((c + 3 * GOLDEN) & MASK))
    return (h >> 11) * _INV53


_U_GOLDEN = np.uint64(GOLDEN)
_U_GOLDEN2 = np.uint64((2 * GOLDEN) & MASK)
_U_GOLDEN3 = np.uint64((3 * GOLDEN) & MASK)
_U_M1 = np.uint64(_M1)
_U_M2 = np.uint64(_M2)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)


@njit
def _mix64_nb(x):
    x = (x ^ (x >> _S30)) * _U_M1
    x = (x ^ (x >> _S27)) * _U_M2
    return x ^ (x >> _S31)


@njit
def uniform_nb(seed, a, b, c):
    h = _mix64_nb(np.uint64(seed))
    h = _mix64_nb(h ^ (np.uint64(a) + _U_GOLDEN))
    h = _mix64_nb(h ^ (np.uint64(b) + _U_GOLDEN2))
    h = _mix64_nb(h ^ (np.uint64(c) + _U_GOLDEN3))
    return np.float64(h >> _S11) * _INV53


def _mix64_np(x):
    x = (x ^ (x >> _S30)) * _U_M1
    x = (x ^ (x >> _S27)) * _U_M2
    return x ^ (x >> _S31)


def uniform_np(seed, a, b, c):
    """Vectorised form; ``a``, ``b``, ``c`` broadcast as uint64 arrays."""
    with np.errstate(over="ignore"):
        a = np.asarray(a, dtype=np.uint64)
        b = np.asarray(b, dtype=np.uint64)
        c = np.asarray(c, dtype=np.uint64)
        h = _mix64_np(np.uint64(seed & MASK))
        h = _mix64_np(h ^ (a + _U_GOLDEN))
        h = _mix64_np(h ^ (b + _U_GOLDEN2))
        h = _mix64_np(h ^ (c + _U_GOLDEN3))
        return (h >> _S11).astype(np.float64) * _INV53
