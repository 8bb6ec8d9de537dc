"""Fast invariant suite behind ``phasenet verify``.

Each check returns ``(passed, detail)``; ``run_checks`` collects them into a
JSON-serializable report.  Sizes are kept small so the whole suite runs in a
few seconds; the pytest suite covers the same properties at full size.
"""

from __future__ import annotations

import math
import time

import numpy as np

from . import zas as zas_mod
from .asf import asf_forward, init_asf_params
from .evaluation import estimate_hr, metrics
from .gradcheck import check_model_gradients
from .model import ModelConfig, PhaseNet, count_params
from .oscillator import (BoundParams, OscillatorParams, WaveParams, discretize, empirical_rademacher,
                         fir_convolve, impulse_response, rademacher_bound, simulate_damped_wave_1d,
                         ssm_rollout, wave_energy)
from .synth import SynthConfig, clip_rng, generate_clip
from .tensor_core import Rng, permute_axes
from .training import TrainConfig, pearson_loss
from .zas import ZasConfig, zas_flop_count, zas_forward

RNG_GOLDEN = [0.3898297483912715, 0.01678829452815611, 0.9007606806068834, 0.5829302930280781,
              0.45244189501146836, 0.24943152228274335, 0.46795300422287345, 0.3280767391525029]


def check_tensor_permute():
    x = Rng(1).normal((2, 3, 4, 5))
    y = permute_axes(permute_axes(x, (2, 0, 3, 1)), (1, 3, 0, 2))
    return bool(np.array_equal(x, y)), "inverse permutation round-trip"


def check_tensor_rng():
    got = Rng(7).uniform((8,)).tolist()
    return got == RNG_GOLDEN, f"first 8 uniforms for seed 7: {got}"


def check_equivalence():
    rng = Rng(11)
    worst = 0.0
    for _ in range(20):
        m = discretize(OscillatorParams(rng.uniform((), 1e-3, 5), rng.uniform((), 1e-3, 5), 1 / 30))
        a = rng.normal((512,))
        err = np.max(np.abs(fir_convolve(impulse_response(m, 512), a) - ssm_rollout(m, a)))
        worst = max(worst, err / np.max(np.abs(a)))
    return worst <= 1e-10, f"max relative deviation {worst:.3e}"


def check_truncation():
    rng = Rng(12)
    ok = True
    for _ in range(10):
        m = discretize(OscillatorParams(rng.uniform((), 0.5, 5), rng.uniform((), 0.5, 5), 1 / 30))
        a = rng.uniform((1024,), -1, 1)
        full = ssm_rollout(m, a)
        for R in (4, 16, 64):
            k = impulse_response(m, R)
            ok &= bool(np.max(np.abs(full - fir_convolve(k, a))) <= k.tail_bound)
    return ok, "rollout vs truncated FIR within tail bound"


def check_stability():
    grid = np.linspace(0.1, 5, 20)
    worst = max(discretize(OscillatorParams(a, w, 1 / 30)).spectral_radius for a in grid for w in grid)
    return worst < 1.0, f"max spectral radius {worst:.6f}"


def check_rademacher():
    rng = Rng(13)
    b = BoundParams(K=1.0, rho=0.5, n=200, R=8)
    phi = rng.uniform((200, 8), -1, 1)
    est, se = empirical_rademacher(rng, phi, b.L, draws=500, return_stderr=True)
    bound = rademacher_bound(b)
    return est <= bound + 3 * se, f"empirical {est:.4f} vs bound {bound:.4f}"


def check_wave_energy():
    w = WaveParams(alpha=0.5, c=1.0, dx=0.01, dt=0.005, n_points=101)
    x = np.linspace(0, 1, 101)
    f = simulate_damped_wave_1d(w, np.sin(np.pi * x), np.zeros(101), 300)
    e = wave_energy(w, f)
    return bool(np.all(np.diff(e) <= 1e-12 * e[0])), "damped energy non-increasing"


def check_zas_self_inversion():
    x = Rng(14).normal((2, 8, 3, 6, 6))
    ok = all(np.array_equal(zas_forward(zas_forward(x, c), c), x)
             for c in (ZasConfig(0.25, 2), ZasConfig(0.5, 4), ZasConfig(0.5, 1)))
    return ok, "ZAS(ZAS(x)) == x"


def check_zas_multiset():
    x = Rng(15).normal((2, 8, 3, 6, 6))
    y = zas_forward(x, ZasConfig(0.5, 2))
    return bool(np.array_equal(np.sort(x, axis=None), np.sort(y, axis=None))), "entries permuted only"


def check_zas_flops():
    return zas_flop_count((2, 8, 3, 6, 6), ZasConfig(0.5, 2)) == 0, "no arithmetic ufuncs in forward"


def check_asf_mask():
    rng = Rng(16)
    Z = rng.normal((2, 4, 5, 4, 4))
    out, _ = asf_forward(Z, init_asf_params(rng, 4))
    s = out.mask.sum(axis=(-2, -1))
    return bool(np.max(np.abs(s - 1)) <= 1e-12), "mask sums to one per frame"


def check_param_count():
    cfgs = [ModelConfig(), ModelConfig.paper(), ModelConfig(use_asf=False, tcn_layers=1)]
    ok = all(count_params(c) == PhaseNet(c, seed=0).params.total_params for c in cfgs)
    return ok, "analytic count matches registry"


def check_causality():
    cfg = ModelConfig(est_channels=(2, 2), tcn_channels=3, T=16, H=4, W=4)
    net = PhaseNet(cfg, seed=1)
    h = Rng(17).normal((1, cfg.tcn_channels, 16))
    h2 = h.copy()
    h2[:, :, 10:] += 1.0
    a, b = _head(net, h), _head(net, h2)
    return bool(np.array_equal(a[:, :10], b[:, :10])), "head output before t unaffected by inputs at >= t"


def _head(net, s):
    from .layers import causal_conv1d_forward, gated_layer_forward
    p = net.params
    for l, d in enumerate(net.cfg.dilations):
        s, _ = gated_layer_forward(s, p, f"tcn{l}", d)
    y, _ = causal_conv1d_forward(s, p["out.w"], p["out.b"], 1)
    return y[:, 0]


def check_pearson():
    y = Rng(18).normal((64,))
    ok = abs(pearson_loss(y, y) + 1) <= 1e-12 and abs(pearson_loss(-y, y) - 1) <= 1e-12
    ok &= abs(pearson_loss(2 * y + 7, y) + 1) <= 1e-12
    return ok, "perfect, anti and affine cases"


def check_gradients():
    cfg = ModelConfig(est_channels=(2, 2), zas_p=0.5, tcn_channels=2, tcn_layers=2, T=6, H=4, W=4)
    net = PhaseNet(cfg, seed=2)
    rng = Rng(19)
    errs = check_model_gradients(net, rng.uniform((1, 3, 6, 4, 4)), rng.normal((1, 6)), TrainConfig(lam=0.1))
    worst = max(errs.values())
    return worst <= 1e-5, f"max relative gradient error {worst:.2e}"


def check_metrics():
    rng = Rng(20)
    p, g = rng.uniform((50,), 50, 120), rng.uniform((50,), 50, 120)
    rep = metrics(p, g)
    return rep.rmse_bpm >= rep.mae_bpm >= 0, "rmse >= mae"


def check_hr():
    t = np.arange(512) / 30.0
    return abs(estimate_hr(np.sin(2 * math.pi * 1.5 * t), 30.0).hr_bpm - 90.0) <= 60 * 30 / 4096, "1.5 Hz -> 90 bpm"


def check_synth_determinism():
    cfg = SynthConfig(T=96, H=8, W=8)
    a = generate_clip(cfg, clip_rng(cfg.seed, 3))
    b = generate_clip(cfg, clip_rng(cfg.seed, 3))
    return bool(np.array_equal(a.frames, b.frames)), "same seed, same clip"


CHECKS = [
    ("tensor.permute_inverse", check_tensor_permute),
    ("tensor.rng_golden", check_tensor_rng),
    ("oscillator.ssm_fir_equivalence", check_equivalence),
    ("oscillator.truncation_bound", check_truncation),
    ("oscillator.stability_grid", check_stability),
    ("oscillator.rademacher", check_rademacher),
    ("oscillator.wave_energy", check_wave_energy),
    ("zas.self_inversion", check_zas_self_inversion),
    ("zas.multiset", check_zas_multiset),
    ("zas.zero_flops", check_zas_flops),
    ("asf.mask_normalization", check_asf_mask),
    ("model.param_count", check_param_count),
    ("model.head_causality", check_causality),
    ("training.pearson_contracts", check_pearson),
    ("training.gradients", check_gradients),
    ("eval.rmse_ge_mae", check_metrics),
    ("eval.hr_sine", check_hr),
    ("synth.determinism", check_synth_determinism),
]


def run_checks(inject_fault=None):
    if inject_fault not in (None, "zas"):
        raise ValueError(f"unknown fault {inject_fault!r}")
    zas_mod._FAULT["enabled"] = inject_fault == "zas"
    results = []
    try:
        for name, fn in CHECKS:
            t0 = time.perf_counter()
            try:
                ok, detail = fn()
            except Exception as exc:  # a crashing check is a failing check
                ok, detail = False, f"{type(exc).__name__}: {exc}"
            results.append({"check": name, "status": "pass" if ok else "fail", "detail": detail,
                            "ms": round(1000 * (time.perf_counter() - t0), 1)})
    finally:
        zas_mod._FAULT["enabled"] = False
    passed = sum(r["status"] == "pass" for r in results)
    return {"checks_total": len(results), "checks_passed": passed,
            "failed": [r["check"] for r in results if r["status"] != "pass"], "results": results}
