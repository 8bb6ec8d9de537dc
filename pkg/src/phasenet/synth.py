"""Synthetic rPPG clips rendered from a driven damped oscillator.

Each pixel follows I = I0 + s(h,w) g(c) z_t + distractors + noise, where
``z`` is the oscillator response, ``s`` a smooth gain map peaked on a few
"skin" patches and ``g`` a per-channel gain with green dominant.  Frames are
then translated by small integer offsets to mimic head motion.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .oscillator import OscillatorParams, discretize, ssm_rollout
from .tensor_core import Rng, mix_seed

CLIP_MAGIC = b"PHCL"
CLIP_VERSION = 1


class DegenerateSignalError(ValueError):
    pass


class ClipFormatError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


MIN_DURATION_S = 3.0


@dataclass
class SynthConfig:
    fps: float = 30.0
    T: int = 128
    H: int = 32
    W: int = 32
    hr_range_bpm: tuple = (48.0, 150.0)
    alpha: float = 1.0
    omega_jitter: float = 0.03
    forcing_amplitude: float = 1.0
    forcing_noise: float = 0.05
    burn_in_s: float = 5.0
    pulse_amplitude: float = 0.01
    channel_gain: tuple = (0.35, 1.0, 0.55)
    base_intensity: tuple = (0.55, 0.42, 0.36)
    texture_strength: float = 0.15
    n_patches: int = 3
    patch_sigma: float = 0.1
    noise_std: float = 0.002
    n_distractors: int = 2
    distractor_amplitude: float = 0.01
    motion_px: int = 1
    drift_period_s: float = 4.0
    seed: int = 42

    def __post_init__(self):
        self.hr_range_bpm = tuple(float(v) for v in self.hr_range_bpm)
        self.channel_gain = tuple(float(v) for v in self.channel_gain)
        self.base_intensity = tuple(float(v) for v in self.base_intensity)
        lo, hi = self.hr_range_bpm
        if not 30.0 <= lo <= hi <= 240.0:
            raise ValueError(f"hr_range_bpm must lie within [30, 240], got {self.hr_range_bpm}")
        if hi / 60.0 > self.fps / 2.0:
            raise ValueError(f"Nyquist violated: max HR {hi / 60.0:.3g} Hz exceeds fps/2 = {self.fps / 2:.3g} Hz")
        if self.H < 1 or self.W < 1:
            raise ValueError("H and W must be positive")
        # shorter records cannot pin the dominant frequency to the 1 bpm self-check
        if self.T < MIN_DURATION_S * self.fps:
            raise ValueError(f"clip must span at least {MIN_DURATION_S:g} s "
                             f"({math.ceil(MIN_DURATION_S * self.fps)} frames at {self.fps:g} fps), got T={self.T}")
        if len(self.channel_gain) != 3 or len(self.base_intensity) != 3:
            raise ValueError("channel_gain and base_intensity need 3 entries")

    def to_dict(self):
        d = asdict(self)
        for k in ("hr_range_bpm", "channel_gain", "base_intensity"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown SynthConfig fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def noiseless(cls, **kw):
        base = dict(noise_std=0.0, n_distractors=0, motion_px=0, forcing_noise=0.0)
        base.update(kw)
        return cls(**base)


@dataclass
class ClipRecord:
    frames: np.ndarray
    pulse_gt: np.ndarray
    hr_gt_bpm: float
    meta: dict = field(default_factory=dict)


def standardize(x):
    x = np.asarray(x, dtype=np.float64)
    xc = x - x.mean()
    sd = math.sqrt(float(np.mean(xc * xc)))
    if sd == 0.0 or not np.isfinite(sd):
        raise DegenerateSignalError("signal has zero variance")
    return xc / sd


def _smooth_noise(rng, n, width):
    """White noise smoothed by a moving average of ``width`` samples."""
    width = max(1, int(width))
    w = rng.normal((n + width - 1,))
    return np.convolve(w, np.ones(width) / width, mode="valid")


def dominant_frequency(x, fps, f_lo=0.5, f_hi=4.0, nfft=16384):
    x = np.asarray(x, dtype=np.float64)
    x = (x - x.mean()) * np.hanning(len(x))
    spec = np.abs(np.fft.rfft(x, n=max(nfft, len(x)))) ** 2
    f = np.fft.rfftfreq(max(nfft, len(x)), 1.0 / fps)
    band = (f >= f_lo) & (f <= f_hi)
    return float(f[band][np.argmax(spec[band])])


def gen_pulse(cfg, rng, hr_bpm=None):
    """Latent pulse ``z`` (standardized) and its heart rate in bpm.

    The oscillator is driven by a sinusoid at the heart rate plus smoothed
    noise, with its natural frequency jittered around the same rate.  A burn-in
    period is simulated and discarded so the start-up transient is gone.
    """
    lo, hi = cfg.hr_range_bpm
    if hr_bpm is None:
        hr_bpm = rng.uniform((), lo, hi)
    f_hr = hr_bpm / 60.0
    jitter = rng.uniform((), -cfg.omega_jitter, cfg.omega_jitter)
    omega = 2.0 * math.pi * f_hr * (1.0 + jitter)
    dt = 1.0 / cfg.fps
    n_burn = int(round(cfg.burn_in_s * cfg.fps))
    n = n_burn + cfg.T
    t = np.arange(n) * dt
    phase = rng.uniform((), 0.0, 2.0 * math.pi)
    u = cfg.forcing_amplitude * np.sin(2.0 * math.pi * f_hr * t + phase)
    if cfg.forcing_noise > 0:
        u = u + cfg.forcing_noise * _smooth_noise(rng, n, cfg.fps / 8.0)
    m = discretize(OscillatorParams(cfg.alpha, omega, dt))
    z = ssm_rollout(m, u)[n_burn:]
    try:
        z = standardize(z)
    except DegenerateSignalError:
        raise DegenerateSignalError("zero forcing produced a zero pulse") from None
    return z, float(hr_bpm)


def _blob(H, W, cy, cx, sigma):
    yy, xx = np.mgrid[0:H, 0:W]
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma ** 2))


def gain_map(cfg, rng):
    """Smooth nonnegative map, max 1, concentrated on ``n_patches`` blobs."""
    H, W = cfg.H, cfg.W
    sigma = cfg.patch_sigma * max(H, W)
    s = np.zeros((H, W))
    centers = []
    for _ in range(max(cfg.n_patches, 0)):
        cy = rng.uniform((), 0.25 * H, 0.75 * H)
        cx = rng.uniform((), 0.2 * W, 0.8 * W)
        centers.append((cy, cx))
        s += rng.uniform((), 0.7, 1.0) * _blob(H, W, cy, cx, sigma)
    if cfg.n_patches > 0:
        s /= s.max()
    return s, centers


def _distractor_maps(cfg, rng, centers):
    H, W = cfg.H, cfg.W
    sigma = 0.08 * max(H, W)
    min_dist = 3.0 * cfg.patch_sigma * max(H, W)
    maps = []
    for _ in range(cfg.n_distractors):
        for _attempt in range(50):
            cy, cx = rng.uniform((), 0, H - 1), rng.uniform((), 0, W - 1)
            if all(math.hypot(cy - a, cx - b) >= min_dist for a, b in centers):
                break
        maps.append(_blob(H, W, cy, cx, sigma))
    return maps


def render_clip(pulse, cfg, rng, hr_bpm=float("nan"), gain=None):
    """Render frames [3, T, H, W] in [0, 1] encoding ``pulse`` linearly."""
    pulse = np.asarray(pulse, dtype=np.float64)
    if len(pulse) != cfg.T:
        raise ValueError(f"pulse length {len(pulse)} != cfg.T {cfg.T}")
    H, W, T = cfg.H, cfg.W, cfg.T
    if gain is None:
        s, centers = gain_map(cfg, rng)
    else:
        s, centers = np.asarray(gain, dtype=np.float64), []
    g = np.asarray(cfg.channel_gain)
    I0 = np.asarray(cfg.base_intensity)[:, None, None] * (
        1.0 + cfg.texture_strength * np.tanh(_smooth_field(rng, H, W)))[None]
    frames = I0[:, None] + cfg.pulse_amplitude * g[:, None, None, None] * pulse[None, :, None, None] * s[None, None]
    for dmap in _distractor_maps(cfg, rng, centers):
        d = standardize(_smooth_noise(rng, T, cfg.fps / 2.0) + 1e-12 * np.arange(T))
        dg = rng.uniform((3,), 0.5, 1.0)
        frames = frames + cfg.distractor_amplitude * dg[:, None, None, None] * d[None, :, None, None] * dmap[None, None]
    if cfg.noise_std > 0:
        frames = frames + cfg.noise_std * rng.normal(frames.shape)
    if cfg.motion_px > 0:
        frames = _apply_motion(frames, cfg, rng)
    # values are held at storage (f32) precision so a file round-trip is exact
    frames = np.clip(frames, 0.0, 1.0).astype(np.float32).astype(np.float64)
    meta = {"config": cfg.to_dict(), "hr_gt_bpm": hr_bpm}
    return ClipRecord(frames=frames, pulse_gt=pulse.astype(np.float32).astype(np.float64),
                      hr_gt_bpm=float(hr_bpm), meta=meta)


def _smooth_field(rng, H, W):
    f = rng.normal((H, W))
    k = np.ones(5) / 5.0
    f = np.apply_along_axis(lambda r: np.convolve(r, k, mode="same"), 1, f)
    f = np.apply_along_axis(lambda c: np.convolve(c, k, mode="same"), 0, f)
    return f / (f.std() + 1e-12)


def _apply_motion(frames, cfg, rng):
    C, T, H, W = frames.shape
    period = cfg.drift_period_s * cfg.fps
    py, px = rng.uniform((2,), 0.0, 2.0 * math.pi)
    t = np.arange(T)
    dy = np.rint(cfg.motion_px * np.sin(2 * math.pi * t / period + py)).astype(int)
    dx = np.rint(cfg.motion_px * np.sin(2 * math.pi * t / (1.3 * period) + px)).astype(int)
    out = np.empty_like(frames)
    rows = np.arange(H)
    cols = np.arange(W)
    for k in range(T):
        ri = np.clip(rows - dy[k], 0, H - 1)
        ci = np.clip(cols - dx[k], 0, W - 1)
        out[:, k] = frames[:, k][:, ri][:, :, ci]
    return out


def generate_clip(cfg, rng, hr_bpm=None):
    z, hr = gen_pulse(cfg, rng, hr_bpm)
    f_dom = dominant_frequency(z, cfg.fps)
    if abs(60.0 * f_dom - hr) > 1.0:
        raise DegenerateSignalError(
            f"pulse dominant frequency {60 * f_dom:.2f} bpm disagrees with target {hr:.2f} bpm")
    return render_clip(z, cfg, rng, hr_bpm=hr)


def clip_rng(seed, index):
    return Rng(mix_seed(seed, index))


def write_clip(path, rec):
    frames = np.ascontiguousarray(rec.frames, dtype="<f4")
    C, T, H, W = frames.shape
    pulse = np.ascontiguousarray(rec.pulse_gt, dtype="<f4")
    if pulse.shape != (T,):
        raise ValueError("pulse_gt length must equal T")
    meta = dict(rec.meta)
    meta["hr_gt_bpm"] = rec.hr_gt_bpm
    mbytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf = (CLIP_MAGIC + struct.pack("<I", CLIP_VERSION) + struct.pack("<4I", C, T, H, W)
           + frames.tobytes() + pulse.tobytes() + struct.pack("<I", len(mbytes)) + mbytes)
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf)
    os.replace(tmp, str(path))
    return hashlib.sha256(buf).hexdigest()


def read_clip(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != CLIP_MAGIC:
        raise ClipFormatError(f"bad magic: expected {CLIP_MAGIC!r}, found {data[:4]!r}", 0)
    if len(data) < 24:
        raise ClipFormatError("truncated header", len(data))
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CLIP_VERSION:
        raise ClipFormatError(f"unsupported version: expected {CLIP_VERSION}, found {version}", 4)
    C, T, H, W = struct.unpack_from("<4I", data, 8)
    off = 24
    nf = C * T * H * W
    need = off + 4 * nf + 4 * T + 4
    if len(data) < need:
        raise ClipFormatError(f"truncated payload: need {need} bytes, file has {len(data)}", len(data))
    frames = np.frombuffer(data, "<f4", nf, off).reshape(C, T, H, W).astype(np.float64)
    off += 4 * nf
    pulse = np.frombuffer(data, "<f4", T, off).astype(np.float64)
    off += 4 * T
    (mlen,) = struct.unpack_from("<I", data, off)
    off += 4
    if len(data) < off + mlen:
        raise ClipFormatError(f"truncated metadata: need {mlen} bytes", len(data))
    meta = json.loads(data[off:off + mlen].decode("utf-8"))
    return ClipRecord(frames=frames, pulse_gt=pulse, hr_gt_bpm=float(meta.get("hr_gt_bpm", float("nan"))), meta=meta)


def generate_dataset(cfg, n_clips, out_dir, first_index=0):
    """Write ``clip_<i>.phcl`` files plus ``manifest.json``; returns the manifest."""
    os.makedirs(out_dir, exist_ok=True)
    clips = []
    for i in range(first_index, first_index + n_clips):
        rec = generate_clip(cfg, clip_rng(cfg.seed, i))
        name = f"clip_{i}.phcl"
        digest = write_clip(os.path.join(out_dir, name), rec)
        clips.append({"index": i, "file": name, "sha256": digest, "hr_gt_bpm": rec.hr_gt_bpm})
    manifest = {"config": cfg.to_dict(), "n_clips": n_clips, "clips": clips}
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_dataset(data_dir):
    with open(os.path.join(data_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    return [read_clip(os.path.join(data_dir, c["file"])) for c in manifest["clips"]], manifest


def make_clips(cfg, n_clips, first_index=0):
    """In-memory equivalent of ``generate_dataset`` (no files)."""
    return [generate_clip(cfg, clip_rng(cfg.seed, i)) for i in range(first_index, first_index + n_clips)]


def to_windows(clips, T):
    """Split clips into contiguous non-overlapping windows of length ``T``."""
    xs, ys, owner = [], [], []
    for ci, rec in enumerate(clips):
        n = rec.frames.shape[1] // T
        for k in range(n):
            xs.append(rec.frames[:, k * T:(k + 1) * T])
            ys.append(rec.pulse_gt[k * T:(k + 1) * T])
            owner.append(ci)
    if not xs:
        raise ValueError(f"no clip is long enough for a window of {T} frames")
    return np.stack(xs), np.stack(ys), np.asarray(owner)
