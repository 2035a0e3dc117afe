"""Counter-based random streams.

Every draw is a pure function of ``(seed, stream, counter)``: a splitmix64
style finalizer chained over the three keys. Nothing is stateful, so results
do not depend on evaluation order, chunking or thread count. ``stream`` is
usually a point index; ``counter`` enumerates draws within that stream.

The scalar ``*_nb`` twins are numba-compiled and bit-identical to the
vectorized numpy versions (pure integer arithmetic until the final
conversion to float).
"""
import numpy as np

from ._backend import njit

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_STREAM_MUL = 0xD1B54A32D192ED03
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_TWO_M53 = 2.0 ** -53

# domain tags keep independent uses of one user seed apart
DOMAIN_MLESAC = 0x4D4C4553
DOMAIN_PERTURB = 0x50455254
DOMAIN_SWEEP = 0x53574550


def _mix_int(z):
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed, *keys):
    """Fold integer ``keys`` into ``seed``; returns a uint64-range Python int."""
    h = _mix_int((int(seed) & MASK64) ^ _GOLDEN)
    for k in keys:
        h = _mix_int(h + ((int(k) + 1) * _STREAM_MUL & MASK64))
    return h


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def hash_u64(seed, stream, counter):
    """Vectorized 64-bit hash of (seed, stream, counter); broadcasts arrays."""
    seed = np.uint64(int(seed) & MASK64)
    stream = np.asarray(stream).astype(np.uint64)
    counter = np.asarray(counter).astype(np.uint64)
    # 0-d operands decay to numpy scalars, which warn on the intended wraparound
    with np.errstate(over="ignore"):
        h = _mix(np.asarray(seed ^ np.uint64(_GOLDEN), dtype=np.uint64))
        h = _mix(h + (stream + np.uint64(1)) * np.uint64(_STREAM_MUL))
        h = _mix(h + (counter + np.uint64(1)) * np.uint64(_GOLDEN))
    return h


def uniform(seed, stream, counter):
    """Uniform doubles in [0, 1) with 53 random bits."""
    return (hash_u64(seed, stream, counter) >> np.uint64(11)).astype(np.float64) * _TWO_M53


def uniform_open0(seed, stream, counter):
    """Uniform doubles in (0, 1]; safe under ``log``."""
    bits = hash_u64(seed, stream, counter) >> np.uint64(11)
    return (bits.astype(np.float64) + 1.0) * _TWO_M53


def standard_normal(seed, stream):
    """One N(0, 1) variate per stream via Box-Muller on counters 0 and 1."""
    u1 = uniform_open0(seed, stream, 0)
    u2 = uniform(seed, stream, 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


@njit
def _mix_nb(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


@njit
def hash_u64_nb(seed, stream, counter):
    h = _mix_nb(np.uint64(seed) ^ np.uint64(_GOLDEN))
    h = _mix_nb(h + (np.uint64(stream) + np.uint64(1)) * np.uint64(_STREAM_MUL))
    h = _mix_nb(h + (np.uint64(counter) + np.uint64(1)) * np.uint64(_GOLDEN))
    return h


@njit
def uniform_nb(seed, stream, counter):
    return np.float64(hash_u64_nb(seed, stream, counter) >> np.uint64(11)) * _TWO_M53
