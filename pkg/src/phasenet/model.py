"""PHASE-Net: ESTBlock encoder with ZAS, adaptive spatial filter, gated TCN head."""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import layers as L
from .asf import asf_backward, asf_forward, hidden_channels, init_asf_params
from .tensor_core import Rng
from .zas import ZasConfig, zas_backward, zas_forward

CKPT_MAGIC = b"PHWT"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    in_channels: int = 3
    est_channels: tuple = (8, 16, 32)
    zas_p: float = 0.25
    zas_b: int = 2
    use_zas: bool = True
    use_asf: bool = True
    use_norm: bool = True
    tcn_layers: int = 3
    tcn_channels: int = 16
    tcn_kernel: int = 3
    dilation_base: int = 2
    T: int = 64
    H: int = 32
    W: int = 32
    norm_eps: float = 1e-5

    def __post_init__(self):
        self.est_channels = tuple(int(c) for c in self.est_channels)
        if self.tcn_layers < 1:
            raise ValueError("tcn_layers must be >= 1")
        if self.tcn_kernel < 1 or self.dilation_base < 1:
            raise ValueError("tcn_kernel and dilation_base must be >= 1")
        if not self.est_channels:
            raise ValueError("need at least one ESTBlock")
        ZasConfig(self.zas_p, self.zas_b)

    @property
    def zas(self):
        return ZasConfig(self.zas_p, self.zas_b)

    @property
    def dilations(self):
        return [self.dilation_base ** l for l in range(self.tcn_layers)]

    @property
    def receptive_field(self):
        return 1 + (self.tcn_kernel - 1) * sum(self.dilations)

    @property
    def feature_channels(self):
        return self.est_channels[-1]

    def to_dict(self):
        d = asdict(self)
        d["est_channels"] = list(self.est_channels)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown ModelConfig fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def mini(cls, **kw):
        return cls(**kw)

    @classmethod
    def paper(cls, **kw):
        base = dict(est_channels=(16, 32, 64), tcn_channels=32, T=128, H=128, W=128)
        base.update(kw)
        return cls(**base)


class ParamStore:
    """Flat registry of named learnable arrays and their gradients."""

    def __init__(self):
        self.params = {}
        self.grads = {}

    def register(self, name, value):
        if name in self.params:
            raise KeyError(f"parameter {name!r} registered twice")
        self.params[name] = np.ascontiguousarray(value, dtype=np.float64)
        self.grads[name] = np.zeros_like(self.params[name])

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def names(self):
        return list(self.params)

    @property
    def total_params(self):
        return int(sum(v.size for v in self.params.values()))

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self):
        other = ParamStore()
        for k, v in self.params.items():
            other.register(k, v.copy())
        return other

    def flat(self):
        return np.concatenate([v.ravel() for v in self.params.values()])


def count_params(cfg):
    """Analytic parameter count, layer by layer."""
    total = 0
    cin = cfg.in_channels
    for cout in cfg.est_channels:
        total += cin * cout * 27 + cout
        if cfg.use_norm:
            total += 2 * cout
        cin = cout
    c = cfg.feature_channels
    if cfg.use_asf:
        h = hidden_channels(c)
        total += c * h * 9 + h + h * 1 + 1
    tc, k = cfg.tcn_channels, cfg.tcn_kernel
    total += 2 * c * tc + tc
    total += cfg.tcn_layers * 2 * (tc * tc * k + tc)
    total += tc + 1
    # ZAS is index-only and adds nothing
    return total


def init_params(cfg, rng):
    ps = ParamStore()
    cin = cfg.in_channels
    for i, cout in enumerate(cfg.est_channels):
        ps.register(f"est{i}.conv.w", rng.normal((cout, cin, 3, 3, 3)) / np.sqrt(27 * cin))
        ps.register(f"est{i}.conv.b", np.zeros(cout))
        if cfg.use_norm:
            ps.register(f"est{i}.norm.gamma", np.ones(cout))
            ps.register(f"est{i}.norm.beta", np.zeros(cout))
        cin = cout
    c = cfg.feature_channels
    if cfg.use_asf:
        for k, v in init_asf_params(rng, c).items():
            ps.register(k, v)
    tc, k = cfg.tcn_channels, cfg.tcn_kernel
    ps.register("proj.w", rng.normal((tc, 2 * c, 1)) / np.sqrt(2 * c))
    ps.register("proj.b", np.zeros(tc))
    for l in range(cfg.tcn_layers):
        for gate in ("f", "g"):
            ps.register(f"tcn{l}.{gate}.w", rng.normal((tc, tc, k)) / np.sqrt(tc * k))
            ps.register(f"tcn{l}.{gate}.b", np.zeros(tc))
    ps.register("out.w", rng.normal((1, tc, 1)) / np.sqrt(tc))
    ps.register("out.b", np.zeros(1))
    return ps


def normalize_input(video, eps=1e-8, return_cache=False):
    """Remove each pixel's temporal mean, then scale each channel to unit std."""
    x = video - video.mean(axis=2, keepdims=True)
    sd = np.sqrt((x * x).mean(axis=(2, 3, 4), keepdims=True))
    out = x / (sd + eps)
    return (out, (x, sd, eps)) if return_cache else out


def normalize_input_backward(grad, cache):
    x, sd, eps = cache
    axes = (2, 3, 4)
    n = x.shape[2] * x.shape[3] * x.shape[4]
    s = sd + eps
    safe = np.where(sd > 0, sd, 1.0)
    gx = grad / s - x * (grad * x).sum(axis=axes, keepdims=True) / (s * s * n * safe)
    return gx - gx.mean(axis=2, keepdims=True)


def est_block_forward(x, params, prefix, zas_cfg=None, use_norm=True, eps=1e-5):
    """conv3d(3x3x3, pad 1) -> norm -> tanh -> ZAS -> 2x2 average pool."""
    if x.ndim != 5:
        raise ValueError(f"expected a rank-5 clip, got {x.shape}")
    if x.shape[3] < 2 or x.shape[4] < 2:
        raise ValueError(f"spatial dims must be >= 2, got {x.shape[3:]}")
    h, c_conv = L.conv3d_forward(x, params[prefix + ".conv.w"], params[prefix + ".conv.b"], (1, 1, 1))
    c_norm = None
    if use_norm:
        h, c_norm = L.instance_norm_forward(h, params[prefix + ".norm.gamma"],
                                            params[prefix + ".norm.beta"], eps)
    a_pre = np.tanh(h)
    a = a_pre if zas_cfg is None else zas_forward(a_pre, zas_cfg)
    out, pshape = L.avg_pool2_forward(a)
    return out, (c_conv, c_norm, a_pre, zas_cfg, pshape, prefix)


def est_block_backward(grad, cache, need_input_grad=True):
    c_conv, c_norm, a_pre, zas_cfg, pshape, prefix = cache
    grads = {}
    g = L.avg_pool2_backward(grad, pshape)
    if zas_cfg is not None:
        g = zas_backward(g, zas_cfg)
    g = g * (1.0 - a_pre * a_pre)
    if c_norm is not None:
        g, grads[prefix + ".norm.gamma"], grads[prefix + ".norm.beta"] = L.instance_norm_backward(g, c_norm)
    gx, grads[prefix + ".conv.w"], grads[prefix + ".conv.b"] = L.conv3d_backward(g, c_conv, need_input_grad)
    return gx, grads


def gtcn_layer_forward(s, params, prefix, dilation):
    return L.gated_layer_forward(s, params, prefix, dilation)


class PhaseNet:
    """Forward/backward over a ParamStore.  One backward per forward."""

    def __init__(self, cfg=None, seed=0, params=None):
        self.cfg = cfg or ModelConfig()
        self.params = params if params is not None else init_params(self.cfg, Rng(seed))
        self._cache = None

    def forward(self, video, cache=True):
        cfg = self.cfg
        if video.ndim != 5 or video.shape[1] != cfg.in_channels:
            raise ValueError(f"expected [B,{cfg.in_channels},T,H,W], got {video.shape}")
        p = self.params
        x, c_in = normalize_input(np.asarray(video, dtype=np.float64), return_cache=True)
        zcfg = cfg.zas if cfg.use_zas else None
        est_caches = []
        for i in range(len(cfg.est_channels)):
            x, c = est_block_forward(x, p, f"est{i}", zcfg, cfg.use_norm, cfg.norm_eps)
            est_caches.append(c)
        asf_out, asf_cache = asf_forward(x, p, uniform=not cfg.use_asf)
        s, c_proj = L.causal_conv1d_forward(asf_out.z_cat, p["proj.w"], p["proj.b"], 1)
        tcn_caches = []
        for l, d in enumerate(cfg.dilations):
            s, c = gtcn_layer_forward(s, p, f"tcn{l}", d)
            tcn_caches.append(c)
        y, c_out = L.causal_conv1d_forward(s, p["out.w"], p["out.b"], 1)
        self.last_asf = asf_out
        self._cache = (c_in, est_caches, asf_cache, c_proj, tcn_caches, c_out) if cache else None
        return y[:, 0, :]

    __call__ = forward

    def backward(self, grad_y, input_grad=False):
        """Accumulate parameter gradients into ``params.grads``.

        With ``input_grad=True`` the gradient w.r.t. the raw video is returned.
        """
        if self._cache is None:
            raise RuntimeError("backward requires a fresh forward pass (cache missing or consumed)")
        c_in, est_caches, asf_cache, c_proj, tcn_caches, c_out = self._cache
        self._cache = None
        G = self.params.grads
        g, gw, gb = L.causal_conv1d_backward(np.asarray(grad_y)[:, None, :], c_out)
        G["out.w"] += gw
        G["out.b"] += gb
        for l in reversed(range(len(tcn_caches))):
            g, gr = L.gated_layer_backward(g, tcn_caches[l], f"tcn{l}")
            for k, v in gr.items():
                G[k] += v
        g, gw, gb = L.causal_conv1d_backward(g, c_proj)
        G["proj.w"] += gw
        G["proj.b"] += gb
        g, gr = asf_backward(g, asf_cache)
        for k, v in gr.items():
            G[k] += v
        for i in reversed(range(len(est_caches))):
            # the input clip is data; its gradient is only built on request
            g, gr = est_block_backward(g, est_caches[i], i > 0 or input_grad)
            for k, v in gr.items():
                G[k] += v
        return normalize_input_backward(g, c_in) if input_grad else None


def save_checkpoint(path, params, cfg=None):
    """Write the PHWT binary (atomically) and, if given, the config JSON next to it."""
    buf = bytearray(CKPT_MAGIC)
    buf += struct.pack("<I", CKPT_VERSION)
    store = params.params if isinstance(params, ParamStore) else params
    for name, arr in store.items():
        nb = name.encode("utf-8")
        buf += struct.pack("<H", len(nb)) + nb
        buf += struct.pack("<B", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    _atomic_write(path, bytes(buf))
    if cfg is not None:
        _atomic_write(config_path_for(path), (json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n").encode())


def config_path_for(path):
    return os.path.splitext(str(path))[0] + ".json"


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CKPT_MAGIC:
        raise CheckpointError(f"bad magic at offset 0: expected {CKPT_MAGIC!r}, found {data[:4]!r}")
    if len(data) < 8:
        raise CheckpointError("truncated header at offset 4")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported version at offset 4: expected {CKPT_VERSION}, found {version}")
    off = 8
    ps = ParamStore()
    try:
        while off < len(data):
            (nlen,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<B", data, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", data, off)
            off += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            if off + 8 * n > len(data):
                raise CheckpointError(f"truncated array {name!r} at offset {off}")
            arr = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(dims).astype(np.float64)
            off += 8 * n
            ps.register(name, arr)
    except struct.error as exc:
        raise CheckpointError(f"truncated record at offset {off}") from exc
    return ps


def load_model(path):
    with open(config_path_for(path)) as fh:
        cfg = ModelConfig.from_dict(json.load(fh))
    return PhaseNet(cfg, params=load_checkpoint(path))


def _atomic_write(path, data):
    path = str(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
