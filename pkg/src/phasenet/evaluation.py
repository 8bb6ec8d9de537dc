"""Heart-rate extraction from waveforms and clip-level metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_BAND = (0.7, 3.0)
HR_NFFT = 4096


@dataclass
class HrEstimate:
    hr_bpm: float
    freqs: np.ndarray
    power: np.ndarray
    band: tuple = DEFAULT_BAND
    low_confidence: bool = False


@dataclass
class MetricsReport:
    mae_bpm: float
    rmse_bpm: float
    pearson_r: float | None
    n: int = 0

    def to_dict(self):
        return {"mae_bpm": self.mae_bpm, "rmse_bpm": self.rmse_bpm,
                "pearson_r": self.pearson_r, "n": self.n}


def psd(signal, fps, nperseg=None, window="hann", nfft=None, overlap=0.5):
    """Welch PSD (one-sided density, units^2/Hz).

    Segments of ``min(256, T)`` samples with 50% overlap, each mean-removed
    and windowed; periodograms are averaged.  ``window="boxcar"`` with
    ``nperseg=T`` gives the single-segment raw periodogram.
    """
    x = np.asarray(signal, dtype=np.float64)
    T = len(x)
    if T < 32:
        raise ValueError(f"signal too short for a PSD estimate: {T} < 32 samples")
    L = min(256, T) if nperseg is None else int(nperseg)
    if L > T:
        raise ValueError("segment longer than signal")
    nfft = L if nfft is None else max(int(nfft), L)
    if window == "hann":
        w = 0.5 - 0.5 * np.cos(2.0 * math.pi * np.arange(L) / L)
    elif window == "boxcar":
        w = np.ones(L)
    else:
        raise ValueError(f"unknown window {window!r}")
    step = max(1, L - int(overlap * L))
    starts = range(0, T - L + 1, step)
    acc = np.zeros(nfft // 2 + 1)
    for k, s in enumerate(starts):
        seg = x[s:s + L]
        seg = (seg - seg.mean()) * w
        acc += np.abs(np.fft.rfft(seg, n=nfft)) ** 2
    acc /= k + 1
    p = acc / (fps * float(w @ w))
    if nfft % 2 == 0:
        p[1:-1] *= 2.0
    else:
        p[1:] *= 2.0
    return np.fft.rfftfreq(nfft, 1.0 / fps), p


def _peaks(p):
    """Indices of local maxima (plateau-safe, endpoints included)."""
    left = np.r_[True, p[1:] >= p[:-1]]
    right = np.r_[p[:-1] >= p[1:], True]
    return np.flatnonzero(left & right)


def estimate_hr(signal, fps, band=DEFAULT_BAND, nfft=HR_NFFT, tie_rtol=1e-2):
    """Heart rate from the strongest in-band PSD peak.

    Peaks within ``tie_rtol`` of the strongest count as ties and the lowest
    frequency wins; the 1% default absorbs the scalloping of the zero-padded
    grid, which can split two equal tones by about 0.1%.  ``low_confidence`` is set when the global maximum of the
    spectrum lies outside the band.
    """
    lo, hi = band
    if not 0 < lo < hi < fps / 2.0:
        raise ValueError(f"band {band} must lie within (0, {fps / 2})")
    f, p = psd(signal, fps, nfft=nfft)
    sel = (f >= lo) & (f <= hi)
    if not np.any(sel):
        raise ValueError(f"no PSD bins fall inside band {band}")
    fb, pb = f[sel], p[sel]
    pk = _peaks(pb)
    best = pb[pk].max()
    winners = pk[pb[pk] >= best * (1.0 - tie_rtol)]
    f_peak = float(fb[winners.min()])
    low_conf = bool(p[1:].max() > best * (1.0 + tie_rtol)) if len(p) > 1 else False
    return HrEstimate(hr_bpm=60.0 * f_peak, freqs=f, power=p, band=tuple(band), low_confidence=low_conf)


def pearson_r(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    if den == 0.0:
        return None
    return float(a @ b) / den


def metrics(preds, gts):
    preds = np.asarray(preds, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64)
    if preds.shape != gts.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {gts.shape}")
    if preds.size == 0:
        raise ValueError("no values to score")
    err = preds - gts
    mae = float(np.mean(np.abs(err)))
    rmse = float(math.sqrt(np.mean(err * err)))
    r = pearson_r(preds, gts) if preds.size >= 2 else None
    if r is not None:
        r = max(-1.0, min(1.0, r))
    return MetricsReport(mae, rmse, r, int(preds.size))


def stitch_windows(preds, owner):
    """Concatenate per-window predictions of each clip, each window standardized."""
    out = {}
    for p, c in zip(preds, owner):
        p = np.asarray(p, dtype=np.float64)
        sd = p.std()
        out.setdefault(int(c), []).append((p - p.mean()) / (sd if sd > 0 else 1.0))
    return {c: np.concatenate(v) for c, v in out.items()}


def export_csv(path, t_or_f, prediction, ground_truth):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_or_f", "prediction", "ground_truth"])
        for row in zip(t_or_f, prediction, ground_truth):
            w.writerow([repr(float(v)) for v in row])
