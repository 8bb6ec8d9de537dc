"""Losses, Adam, and the deterministic training loop."""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from .model import PhaseNet, save_checkpoint
from .synth import DegenerateSignalError
from .tensor_core import Rng


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 4
    learning_rate: float = 1e-4
    lam: float = 0.1
    seed: int = 42
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    physics_alpha: float = 1.0
    physics_hr_hz: float = 1.65
    fps: float = 30.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")

    @property
    def physics_omega(self):
        return 2.0 * math.pi * self.physics_hr_hz

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class LossReport:
    l_pred: float
    l_aux: float
    total: float


def pearson_loss(yhat, y, return_grad=False):
    """Negative Pearson correlation; gradient is w.r.t. ``yhat``."""
    yhat = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if yhat.shape != y.shape or yhat.ndim != 1:
        raise ValueError("pearson_loss expects two 1D series of equal length")
    if len(y) < 2:
        raise ValueError("need at least 2 samples")
    a = yhat - yhat.mean()
    b = y - y.mean()
    saa, sbb = float(a @ a), float(b @ b)
    if saa == 0.0 or sbb == 0.0:
        raise DegenerateSignalError("zero variance in prediction or target")
    sab = float(a @ b)
    denom = math.sqrt(saa * sbb)
    loss = -sab / denom
    if not return_grad:
        return loss
    # d/dyhat of -sab/sqrt(saa sbb); centering is absorbed because a, b are centered
    grad = -(b / denom) + (sab / denom) * a / saa
    return loss, grad


def residual_operator(n, alpha, omega, dt):
    """Banded matrix D with (D y)_t = residual at interior t, divided by omega^2."""
    m = n - 2
    D = np.zeros((m, n))
    i = np.arange(m)
    inv = 1.0 / (omega * omega)
    D[i, i] += (1.0 / dt ** 2 - alpha / dt) * inv
    D[i, i + 1] += (-2.0 / dt ** 2 + alpha / dt + omega ** 2) * inv
    D[i, i + 2] += (1.0 / dt ** 2) * inv
    return D


def physics_residual_loss(yhat, alpha, omega, dt, return_grad=False):
    """Mean squared oscillator residual over interior samples.

    r_t = [(y_{t+1} - 2 y_t + y_{t-1})/dt^2 + alpha (y_t - y_{t-1})/dt + omega^2 y_t] / omega^2
    """
    y = np.asarray(yhat, dtype=np.float64)
    if y.ndim != 1 or len(y) < 3:
        raise ValueError("physics residual needs a 1D series with T >= 3")
    inv = 1.0 / (omega * omega)
    r = ((y[2:] - 2.0 * y[1:-1] + y[:-2]) / dt ** 2
         + alpha * (y[1:-1] - y[:-2]) / dt + omega ** 2 * y[1:-1]) * inv
    loss = float(np.mean(r * r))
    if not return_grad:
        return loss
    g = np.zeros_like(y)
    c = 2.0 * r / len(r) * inv
    g[2:] += c / dt ** 2
    g[1:-1] += c * (-2.0 / dt ** 2 + alpha / dt + omega ** 2)
    g[:-2] += c * (1.0 / dt ** 2 - alpha / dt)
    return loss, g


def standardize_with_grad(y):
    mu = y.mean()
    yc = y - mu
    sd = math.sqrt(float(np.mean(yc * yc)))
    if sd == 0.0:
        raise DegenerateSignalError("zero variance in prediction")
    ys = yc / sd

    def back(g):
        return (g - g.mean() - ys * np.mean(g * ys)) / sd

    return ys, back


def aux_loss(yhat, alpha, omega, dt, return_grad=False):
    """Physics residual of the standardized prediction (scale invariant)."""
    ys, back = standardize_with_grad(np.asarray(yhat, dtype=np.float64))
    if not return_grad:
        return physics_residual_loss(ys, alpha, omega, dt)
    loss, g = physics_residual_loss(ys, alpha, omega, dt, return_grad=True)
    return loss, back(g)


def batch_loss(yhat, y, tc, return_grad=True):
    """Mean over the batch of l_pred + lam * l_aux; returns (LossReport, grad)."""
    B = yhat.shape[0]
    lp = la = 0.0
    grad = np.zeros_like(yhat)
    dt = 1.0 / tc.fps
    for i in range(B):
        l1, g1 = pearson_loss(yhat[i], y[i], return_grad=True)
        lp += l1
        grad[i] += g1 / B
        if tc.lam > 0:
            l2, g2 = aux_loss(yhat[i], tc.physics_alpha, tc.physics_omega, dt, return_grad=True)
            la += l2
            grad[i] += tc.lam * g2 / B
    lp /= B
    la /= B
    return LossReport(lp, la, lp + tc.lam * la), grad


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.params.items()}
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in self.params.params.items():
            g = self.params.grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            if self.lr == 0.0:
                continue
            p -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def train(model, X, Y, tc, log_path=None, ckpt_path=None, dump_dir=None, callback=None):
    """Train ``model`` in place on windows X [N,3,T,H,W], Y [N,T].

    Shuffling happens at window granularity with a per-epoch permutation from
    ``Rng(tc.seed)``.  Returns the per-epoch LossReport dicts.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if len(X) == 0:
        raise ValueError("empty training set")
    if len(X) != len(Y):
        raise ValueError("X and Y disagree on the number of windows")
    opt = Adam(model.params, tc.learning_rate, tc.beta1, tc.beta2, tc.adam_eps)
    rng = Rng(tc.seed)
    history = []
    log_fh = open(log_path, "w") if log_path else None
    try:
        for epoch in range(1, tc.epochs + 1):
            t0 = time.perf_counter()
            order = rng.permutation(len(X))
            sums = np.zeros(3)
            nb = 0
            for bi, s in enumerate(range(0, len(X), tc.batch_size)):
                idx = order[s:s + tc.batch_size]
                model.params.zero_grad()
                yhat = model.forward(X[idx])
                try:
                    rep, grad = batch_loss(yhat, Y[idx], tc)
                except DegenerateSignalError as exc:
                    _dump(dump_dir, epoch, bi, idx, str(exc))
                    raise TrainingError(f"degenerate batch {bi} in epoch {epoch}: {exc}") from exc
                if not math.isfinite(rep.total):
                    _dump(dump_dir, epoch, bi, idx, "non-finite loss")
                    raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi} (windows {idx.tolist()})")
                model.backward(grad)
                opt.step()
                sums += (rep.l_pred, rep.l_aux, rep.total)
                nb += 1
            rec = {"epoch": epoch, "l_pred": sums[0] / nb, "l_aux": sums[1] / nb,
                   "total": sums[2] / nb, "wall_ms": round(1000 * (time.perf_counter() - t0), 3)}
            history.append(rec)
            if log_fh:
                log_fh.write(json.dumps(rec) + "\n")
                log_fh.flush()
            if callback:
                callback(rec)
    finally:
        if log_fh:
            log_fh.close()
    if ckpt_path:
        save_checkpoint(ckpt_path, model.params, model.cfg)
    return history


def _dump(dump_dir, epoch, batch, idx, reason):
    if not dump_dir:
        return
    os.makedirs(dump_dir, exist_ok=True)
    with open(os.path.join(dump_dir, "nan_dump.json"), "w") as fh:
        json.dump({"epoch": epoch, "batch_index": batch, "windows": [int(i) for i in idx],
                   "reason": reason}, fh, indent=2)


def predict(model, X, batch_size=8):
    out = []
    for s in range(0, len(X), batch_size):
        out.append(model.forward(np.asarray(X[s:s + batch_size], dtype=np.float64), cache=False))
    return np.concatenate(out, axis=0)
