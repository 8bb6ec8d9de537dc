"""Dense float64 array helpers and a portable counter-based RNG.

Arrays are plain ``numpy.ndarray`` objects in C order (last axis fastest).
The helpers here pin down the few places where the rest of the package needs
stronger guarantees than numpy gives by default: a fixed reduction order and
a random stream that is identical on every platform.

RNG algorithm
-------------
``Rng`` is SplitMix64 used in counter mode.  Draw ``i`` (1-based, counting
across the lifetime of the generator) is::

    z = seed + i * 0x9E3779B97F4A7C15            (mod 2**64)
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

Uniform doubles are ``(z >> 11) * 2**-53`` in [0, 1).  Normals use the
Box-Muller transform on consecutive pairs ``(u1, u2)``::

    r = sqrt(-2 log(1 - u1));  n0 = r cos(2 pi u2);  n1 = r sin(2 pi u2)

Because each draw depends only on (seed, counter) the stream can be produced
in vectorized blocks without changing any value.
"""

from __future__ import annotations

import math

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix64(z):
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def mix_seed(seed, index):
    """Derive an independent child seed from ``(seed, index)``."""
    z = np.array([(int(seed) ^ _mix_int(int(index) + 1)) & _MASK64], dtype=np.uint64)
    return int(_mix64(z)[0])


def _mix_int(x):
    z = np.array([(x * int(GOLDEN)) & _MASK64], dtype=np.uint64)
    return int(_mix64(z)[0])


class Rng:
    """SplitMix64 counter-mode generator (see module docstring)."""

    def __init__(self, seed=0):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def __repr__(self):
        return f"Rng(seed={self.seed}, counter={self.counter})"

    def spawn(self, index):
        return Rng(mix_seed(self.seed, index))

    def next_u64(self, n):
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + idx * GOLDEN
        return _mix64(z)

    def uniform(self, shape=(), low=0.0, high=1.0):
        n = int(np.prod(shape, dtype=np.int64)) if shape != () else 1
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        u = low + (high - low) * u
        return u.reshape(shape) if shape != () else float(u[0])

    def normal(self, shape=()):
        n = int(np.prod(shape, dtype=np.int64)) if shape != () else 1
        m = (n + 1) // 2
        u = self.uniform((2 * m,))
        u1, u2 = u[0::2], u[1::2]
        r = np.sqrt(-2.0 * np.log1p(-u1))
        out = np.empty(2 * m)
        out[0::2] = r * np.cos(2.0 * math.pi * u2)
        out[1::2] = r * np.sin(2.0 * math.pi * u2)
        out = out[:n]
        return out.reshape(shape) if shape != () else float(out[0])

    def integers(self, low, high, size=None):
        """Uniform integers in [low, high) via 53-bit uniform scaling."""
        span = high - low
        if span <= 0:
            raise ValueError("empty integer range")
        shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
        u = self.uniform(shape if shape else (1,))
        vals = low + np.minimum((np.asarray(u) * span).astype(np.int64), span - 1)
        return int(vals.reshape(-1)[0]) if size is None else vals.reshape(shape)

    def permutation(self, n):
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = np.arange(n)
        if n < 2:
            return perm
        u = self.uniform((n - 1,))
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = min(int(u[k] * (i + 1)), i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def signs(self, shape):
        bits = self.next_u64(int(np.prod(shape))) >> np.uint64(63)
        return (1.0 - 2.0 * bits.astype(np.float64)).reshape(shape)


def _check_shape(shape):
    shape = tuple(int(s) for s in np.atleast_1d(shape)) if not isinstance(shape, tuple) else shape
    if any(int(s) < 0 for s in shape):
        raise ValueError(f"invalid shape {shape}")
    return tuple(int(s) for s in shape)


def zeros(shape):
    return np.zeros(_check_shape(shape), dtype=np.float64)


def randn(rng, shape):
    return rng.normal(_check_shape(shape))


def as_tensor(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def reshape(t, shape):
    t = as_tensor(t)
    shape = _check_shape(shape)
    if int(np.prod(shape, dtype=np.int64)) != t.size:
        raise ValueError(f"cannot reshape size {t.size} into {shape}")
    return t.reshape(shape).copy()


def slice_axis(t, axis, start, stop):
    t = as_tensor(t)
    n = t.shape[axis]
    if not 0 <= start <= stop <= n:
        raise ValueError(f"slice [{start}:{stop}] out of bounds for axis of length {n}")
    index = [slice(None)] * t.ndim
    index[axis] = slice(start, stop)
    return t[tuple(index)].copy()


def permute_axes(t, axes):
    t = as_tensor(t)
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(t.ndim)):
        raise ValueError(f"axes {axes} are not a permutation of {t.ndim} dims")
    return np.ascontiguousarray(t.transpose(axes))


def sum_axis(t, axis):
    """Sum along ``axis`` accumulating strictly in index order."""
    t = np.moveaxis(as_tensor(t), axis, 0)
    out = np.zeros(t.shape[1:])
    for k in range(t.shape[0]):
        out += t[k]
    return out


def ordered_sum(values):
    total = 0.0
    for v in np.asarray(values, dtype=np.float64).ravel():
        total += float(v)
    return total


def l2_norm(t):
    flat = as_tensor(t).ravel()
    return math.sqrt(ordered_sum(flat * flat))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def tanh(x):
    return np.tanh(np.asarray(x, dtype=np.float64))


def exp(x):
    return np.exp(np.asarray(x, dtype=np.float64))


def add(a, b):
    return np.add(as_tensor(a), as_tensor(b))


def mul(a, b):
    return np.multiply(as_tensor(a), as_tensor(b))
