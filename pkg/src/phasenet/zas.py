"""Zero-FLOPs Axial Swapper: block-wise spatial transpose on trailing channels."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Test hook for `phasenet verify --inject-fault zas`: when set, one extra
# index swap is applied after the transpose, which breaks self-inversion.
_FAULT = {"enabled": False}


@dataclass(frozen=True)
class ZasConfig:
    p: float = 0.25
    b: int = 2

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ValueError(f"p must lie in (0, 1), got {self.p}")
        if int(self.b) != self.b or self.b < 1:
            raise ValueError(f"block size must be a positive integer, got {self.b}")

    def swapped_channels(self, C):
        return int(math.floor(self.p * C + 1e-12))


def zas_forward(x, cfg):
    """Transpose every b x b block of the last ``floor(p*C)`` channels.

    ``x`` has shape [B, C, T, H, W].  Rows and columns beyond the largest
    multiple of ``b`` are copied through unchanged, so the map is its own
    inverse for every shape.
    """
    if x.ndim != 5:
        raise ValueError(f"expected a rank-5 clip, got shape {x.shape}")
    out = x.copy()
    B, C, T, H, W = x.shape
    k = cfg.swapped_channels(C)
    b = int(cfg.b)
    H2, W2 = (H // b) * b, (W // b) * b
    if k == 0 or b == 1 or H2 == 0 or W2 == 0:
        return out
    core = x[:, C - k:, :, :H2, :W2].reshape(B, k, T, H2 // b, b, W2 // b, b)
    out[:, C - k:, :, :H2, :W2] = core.swapaxes(-3, -1).reshape(B, k, T, H2, W2)
    if _FAULT["enabled"]:
        tmp = out[:, C - 1, :, 0, 0].copy()
        out[:, C - 1, :, 0, 0] = out[:, C - 1, :, 0, 1]
        out[:, C - 1, :, 0, 1] = tmp
    return out


def zas_backward(grad_out, cfg):
    # the Jacobian is a symmetric permutation matrix
    return zas_forward(grad_out, cfg)


class _MacCounter(np.ndarray):
    """ndarray that counts arithmetic ufunc calls made on it."""

    calls = 0
    writes = 0
    ARITHMETIC = {"add", "subtract", "multiply", "divide", "true_divide", "matmul",
                  "power", "negative", "sqrt", "exp", "tanh"}

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if ufunc.__name__ in self.ARITHMETIC:
            type(self).calls += 1
        args = [np.asarray(i) if isinstance(i, _MacCounter) else i for i in inputs]
        if "out" in kwargs:
            kwargs["out"] = tuple(np.asarray(o) for o in kwargs["out"])
        return getattr(ufunc, method)(*args, **kwargs)

    def __setitem__(self, key, value):
        type(self).writes += int(np.size(value))
        np.asarray(self)[key] = np.asarray(value)


def zas_audit(x_shape, cfg):
    """Shadow pass returning (arithmetic_ops, moved, relocated).

    The forward path runs on an index-valued array subclass that records
    every arithmetic ufunc and every element written.  ``moved`` counts
    elements routed through the block transpose; ``relocated`` counts those
    whose flat index actually changes (block diagonals stay put).
    """
    n = int(np.prod(x_shape))
    idx = np.arange(n, dtype=np.float64).reshape(x_shape).view(_MacCounter)
    _MacCounter.calls = 0
    _MacCounter.writes = 0
    out = zas_forward(idx, cfg)
    relocated = int(np.count_nonzero(np.asarray(out).ravel() != np.arange(n)))
    return _MacCounter.calls, _MacCounter.writes, relocated


def zas_flop_count(x_shape, cfg):
    return zas_audit(tuple(x_shape), cfg)[0]


def moved_element_count(x_shape, cfg):
    return zas_audit(tuple(x_shape), cfg)[1]
