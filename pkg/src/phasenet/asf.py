"""Adaptive Spatial Filter.

A two-layer per-frame conv net scores every pixel, a spatial softmax turns
the scores into a mask that sums to one, and the mask-weighted spatial sum
gives one feature vector per frame.  The first difference of that sequence
is appended along the channel axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import conv3d_backward, conv3d_forward


@dataclass
class AsfOutput:
    z: np.ndarray
    v: np.ndarray
    z_cat: np.ndarray
    mask: np.ndarray


def hidden_channels(c):
    return max(1, c // 2)


def init_asf_params(rng, c, prefix="asf"):
    h = hidden_channels(c)
    return {
        f"{prefix}.conv1.w": rng.normal((h, c, 1, 3, 3)) / np.sqrt(9 * c),
        f"{prefix}.conv1.b": np.zeros(h),
        f"{prefix}.conv2.w": rng.normal((1, h, 1, 1, 1)) / np.sqrt(h),
        f"{prefix}.conv2.b": np.zeros(1),
    }


def spatial_softmax(logits):
    """Softmax over the trailing (H, W) axes."""
    shp = logits.shape
    flat = logits.reshape(shp[:-2] + (-1,))
    flat = flat - flat.max(axis=-1, keepdims=True)
    e = np.exp(flat)
    return (e / e.sum(axis=-1, keepdims=True)).reshape(shp)


def aggregate(Z, mask):
    """z[b,c,t] = sum_hw Z[b,c,t,h,w] * mask[b,0,t,h,w]; derivative and concat."""
    z = np.einsum("bcthw,bthw->bct", Z, mask[:, 0])
    v = np.zeros_like(z)
    v[:, :, 1:] = z[:, :, 1:] - z[:, :, :-1]
    return z, v, np.concatenate([z, v], axis=1)


def asf_forward(Z, params, prefix="asf", uniform=False):
    """Returns (AsfOutput, cache).  ``uniform=True`` replaces the learned mask by GAP."""
    if Z.ndim != 5:
        raise ValueError(f"expected [B,C,T,H,W], got {Z.shape}")
    B, C, T, H, W = Z.shape
    if uniform:
        mask = np.full((B, 1, T, H, W), 1.0 / (H * W))
        convs = None
    else:
        h1, c1 = conv3d_forward(Z, params[f"{prefix}.conv1.w"], params[f"{prefix}.conv1.b"], (0, 1, 1))
        a1 = np.tanh(h1)
        logits, c2 = conv3d_forward(a1, params[f"{prefix}.conv2.w"], params[f"{prefix}.conv2.b"], (0, 0, 0))
        mask = spatial_softmax(logits)
        convs = (c1, a1, c2)
    z, v, z_cat = aggregate(Z, mask)
    return AsfOutput(z, v, z_cat, mask), (Z, mask, convs, prefix)


def asf_backward(grad_zcat, cache):
    """Gradients w.r.t. the input features and the f_conv parameters."""
    if cache is None:
        raise RuntimeError("asf_backward called without a forward cache")
    Z, mask, convs, prefix = cache
    C = Z.shape[1]
    gz = grad_zcat[:, :C].copy()
    gv = grad_zcat[:, C:]
    gz[:, :, 1:] += gv[:, :, 1:]
    gz[:, :, :-1] -= gv[:, :, 1:]
    gZ = gz[:, :, :, None, None] * mask
    grads = {}
    if convs is not None:
        gmask = np.einsum("bct,bcthw->bthw", gz, Z)[:, None]
        axes = (-2, -1)
        glogit = mask * (gmask - (gmask * mask).sum(axis=axes, keepdims=True))
        c1, a1, c2 = convs
        ga1, grads[f"{prefix}.conv2.w"], grads[f"{prefix}.conv2.b"] = conv3d_backward(glogit, c2)
        gh1 = ga1 * (1.0 - a1 * a1)
        gZc, grads[f"{prefix}.conv1.w"], grads[f"{prefix}.conv1.b"] = conv3d_backward(gh1, c1)
        gZ = gZ + gZc
    return gZ, grads


def softmax_jacobian(m):
    """Dense Jacobian of softmax at output ``m`` (flat vector)."""
    m = np.asarray(m, dtype=np.float64).ravel()
    return np.diag(m) - np.outer(m, m)
