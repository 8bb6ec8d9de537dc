"""Differentiable building blocks with hand-written backward passes.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes ``(grad_out, cache)`` and returns the input gradient followed by any
parameter gradients.  Convolutions use a strided window view and
``np.tensordot`` so the heavy lifting lands in BLAS.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor_core import sigmoid


def conv3d_forward(x, w, b, pad):
    """Stride-1 3D cross-correlation. x [B,Ci,T,H,W], w [Co,Ci,kt,kh,kw]."""
    pt, ph, pw = pad
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
    Co, Ci, kt, kh, kw = w.shape
    win = sliding_window_view(xp, (kt, kh, kw), axis=(2, 3, 4))
    B, _, To, Ho, Wo = win.shape[:5]
    cols = win.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(B * To * Ho * Wo, Ci * kt * kh * kw)
    out = cols @ w.reshape(Co, -1).T + b
    out = np.ascontiguousarray(out.reshape(B, To, Ho, Wo, Co).transpose(0, 4, 1, 2, 3))
    return out, (cols, w, pad, x.shape)


def conv3d_backward(grad, cache, need_input_grad=True):
    cols, w, pad, xshape = cache
    Co, Ci, kt, kh, kw = w.shape
    B, _, To, Ho, Wo = grad.shape
    gmat = grad.transpose(0, 2, 3, 4, 1).reshape(-1, Co)
    gw = (gmat.T @ cols).reshape(w.shape)
    gb = gmat.sum(axis=0)
    if not need_input_grad:
        return None, gw, gb
    gcols = (gmat @ w.reshape(Co, -1)).reshape(B, To, Ho, Wo, Ci, kt, kh, kw)
    pt, ph, pw = pad
    _, _, T, H, W = xshape
    gxp = np.zeros((B, Ci, T + 2 * pt, H + 2 * ph, W + 2 * pw))
    for i in range(kt):
        for j in range(kh):
            for k in range(kw):
                gxp[:, :, i:i + To, j:j + Ho, k:k + Wo] += gcols[..., i, j, k].transpose(0, 4, 1, 2, 3)
    gx = gxp[:, :, pt:pt + T, ph:ph + H, pw:pw + W]
    return np.ascontiguousarray(gx), gw, gb


def instance_norm_forward(x, gamma, beta, eps=1e-5):
    """Per-sample, per-channel normalization over (T, H, W)."""
    axes = (2, 3, 4)
    mu = x.mean(axis=axes, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma[None, :, None, None, None] * xhat + beta[None, :, None, None, None]
    return out, (xhat, inv, gamma)


def instance_norm_backward(grad, cache):
    xhat, inv, gamma = cache
    axes = (2, 3, 4)
    ggamma = (grad * xhat).sum(axis=(0,) + axes)
    gbeta = grad.sum(axis=(0,) + axes)
    gxhat = grad * gamma[None, :, None, None, None]
    gx = inv * (gxhat - gxhat.mean(axis=axes, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True))
    return gx, ggamma, gbeta


def avg_pool2_forward(x):
    B, C, T, H, W = x.shape
    if H < 2 or W < 2:
        raise ValueError(f"spatial dims must be >= 2 for 2x2 pooling, got {H}x{W}")
    H2, W2 = H // 2, W // 2
    core = x[:, :, :, :2 * H2, :2 * W2].reshape(B, C, T, H2, 2, W2, 2)
    return core.mean(axis=(4, 6)), x.shape


def avg_pool2_backward(grad, xshape):
    B, C, T, H, W = xshape
    H2, W2 = H // 2, W // 2
    gx = np.zeros(xshape)
    g = np.broadcast_to(grad[:, :, :, :, None, :, None] * 0.25, (B, C, T, H2, 2, W2, 2))
    gx[:, :, :, :2 * H2, :2 * W2] = g.reshape(B, C, T, 2 * H2, 2 * W2)
    return gx


def causal_conv1d_forward(s, w, b, dilation=1):
    """Causal dilated 1D conv.  Tap j reads s[t - (k-1-j)*d]; the last tap is 'now'."""
    B, Ci, T = s.shape
    k = w.shape[2]
    lp = (k - 1) * dilation
    sp = np.pad(s, ((0, 0), (0, 0), (lp, 0)))
    taps = np.stack([sp[:, :, j * dilation:j * dilation + T] for j in range(k)], axis=2)
    out = np.einsum("oij,bijt->bot", w, taps) + b[None, :, None]
    return out, (taps, w, dilation, s.shape)


def causal_conv1d_backward(grad, cache):
    taps, w, d, sshape = cache
    B, Ci, T = sshape
    k = w.shape[2]
    gw = np.einsum("bot,bijt->oij", grad, taps)
    gb = grad.sum(axis=(0, 2))
    gtaps = np.einsum("oij,bot->bijt", w, grad)
    lp = (k - 1) * d
    gsp = np.zeros((B, Ci, T + lp))
    for j in range(k):
        gsp[:, :, j * d:j * d + T] += gtaps[:, :, j]
    return gsp[:, :, lp:], gw, gb


def gated_layer_forward(s, p, prefix, dilation):
    """tanh(conv_f(s)) * sigmoid(conv_g(s)) + residual(s)."""
    f, cf = causal_conv1d_forward(s, p[prefix + ".f.w"], p[prefix + ".f.b"], dilation)
    g, cg = causal_conv1d_forward(s, p[prefix + ".g.w"], p[prefix + ".g.b"], dilation)
    tf = np.tanh(f)
    sg = sigmoid(g)
    res_key = prefix + ".res.w"
    if res_key in p:
        r, cr = causal_conv1d_forward(s, p[res_key], p[prefix + ".res.b"], 1)
    else:
        r, cr = s, None
    return tf * sg + r, (cf, cg, tf, sg, cr)


def gated_layer_backward(grad, cache, prefix):
    cf, cg, tf, sg, cr = cache
    grads = {}
    gf = grad * sg * (1.0 - tf * tf)
    gg = grad * tf * sg * (1.0 - sg)
    gs_f, grads[prefix + ".f.w"], grads[prefix + ".f.b"] = causal_conv1d_backward(gf, cf)
    gs_g, grads[prefix + ".g.w"], grads[prefix + ".g.b"] = causal_conv1d_backward(gg, cg)
    if cr is None:
        gs_r = grad
    else:
        gs_r, grads[prefix + ".res.w"], grads[prefix + ".res.b"] = causal_conv1d_backward(grad, cr)
    return gs_f + gs_g + gs_r, grads
