"""Counter-based random streams keyed by (seed, index, stream).

Every draw is a pure function of its key, so redrawing one block of a field
never touches the values of any other block, and the output does not depend on
evaluation order or thread count.  The mixing function is SplitMix64.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_STREAM = np.uint64(0xD1B54A32D192ED03)
_MASK64 = (1 << 64) - 1


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hash64(seed, index, stream=0):
    """SplitMix64 hash of ``(seed, index, stream)``; vectorised over ``index``."""
    seed = np.uint64(int(seed) & _MASK64)
    stream = np.uint64(int(stream) & _MASK64)
    idx = np.asarray(index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = _mix(seed + _GOLDEN) ^ (stream * _STREAM)
        z = _mix(z + (idx + np.uint64(1)) * _GOLDEN)
        return _mix(z)


def uniform(seed, index, stream=0):
    """Uniform draws in the open interval (0, 1)."""
    bits = hash64(seed, index, stream) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * 2.0**-53


def normal(seed, index, stream=0):
    """Standard normal draws via Box-Muller on two derived streams."""
    u1 = uniform(seed, index, 2 * stream)
    u2 = uniform(seed, index, 2 * stream + 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def derive_seed(master, i):
    """Seed of the ``i``-th realization of an experiment with master seed ``master``."""
    return int(hash64(master, np.uint64(i), stream=0x5EED))
