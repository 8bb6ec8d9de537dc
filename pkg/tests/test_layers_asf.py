import numpy as np
import pytest
from mpmath import mp

from phasenet import layers
from phasenet.asf import (asf_backward, asf_forward, init_asf_params, softmax_jacobian,
                          spatial_softmax)
from phasenet.gradcheck import numerical_grad, rel_error
from phasenet.tensor_core import Rng
from phasenet.zas import ZasConfig, zas_backward, zas_forward

TOL = 1e-5


def scalar_check(forward, backward_grads, arrays, rng):
    """Compare analytic grads of <forward(), G> with central differences."""
    out = forward()
    G = rng.normal(out.shape)
    analytic = backward_grads(G)
    for name, arr in arrays.items():
        num = numerical_grad(lambda: float(np.sum(forward() * G)), arr)
        assert rel_error(analytic[name], num) <= TOL, name


def test_conv3d_matches_scipy_and_grads():
    from scipy.signal import correlate
    rng = Rng(1)
    x = rng.normal((2, 2, 3, 4, 4))
    w = rng.normal((3, 2, 3, 3, 3))
    b = rng.normal((3,))
    out, _ = layers.conv3d_forward(x, w, b, (1, 1, 1))
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    ref = np.stack([np.stack([sum(correlate(xp[n, i], w[o, i], mode="valid") for i in range(2)) + b[o]
                              for o in range(3)]) for n in range(2)])
    np.testing.assert_allclose(out, ref, atol=1e-12)

    def fwd():
        return layers.conv3d_forward(x, w, b, (1, 1, 1))[0]

    def bwd(G):
        gx, gw, gb = layers.conv3d_backward(G, layers.conv3d_forward(x, w, b, (1, 1, 1))[1])
        return {"x": gx, "w": gw, "b": gb}

    scalar_check(fwd, bwd, {"x": x, "w": w, "b": b}, rng)


def test_instance_norm_grads():
    rng = Rng(2)
    x = rng.normal((2, 3, 2, 3, 3))
    g, be = rng.normal((3,)), rng.normal((3,))

    def bwd(G):
        gx, gg, gb = layers.instance_norm_backward(G, layers.instance_norm_forward(x, g, be)[1])
        return {"x": gx, "g": gg, "b": gb}

    scalar_check(lambda: layers.instance_norm_forward(x, g, be)[0], bwd, {"x": x, "g": g, "b": be}, rng)


def test_avg_pool_and_grad():
    rng = Rng(3)
    x = rng.normal((1, 2, 2, 5, 4))
    out, shp = layers.avg_pool2_forward(x)
    assert out.shape == (1, 2, 2, 2, 2)
    assert out[0, 1, 1, 1, 0] == pytest.approx(x[0, 1, 1, 2:4, 0:2].mean(), abs=1e-15)
    scalar_check(lambda: layers.avg_pool2_forward(x)[0],
                 lambda G: {"x": layers.avg_pool2_backward(G, x.shape)}, {"x": x}, rng)
    with pytest.raises(ValueError):
        layers.avg_pool2_forward(np.zeros((1, 1, 1, 1, 4)))


@pytest.mark.parametrize("d", [1, 2, 4])
def test_causal_conv1d_brute_force_and_grads(d):
    rng = Rng(4 + d)
    s = rng.normal((2, 3, 11))
    w = rng.normal((2, 3, 3))
    b = rng.normal((2,))
    out, _ = layers.causal_conv1d_forward(s, w, b, d)
    ref = np.zeros_like(out)
    for t in range(11):
        for j in range(3):
            src = t - (2 - j) * d
            if src >= 0:
                ref[:, :, t] += np.einsum("oi,bi->bo", w[:, :, j], s[:, :, src])
    ref += b[None, :, None]
    np.testing.assert_allclose(out, ref, atol=1e-13)

    def bwd(G):
        gs, gw, gb = layers.causal_conv1d_backward(G, layers.causal_conv1d_forward(s, w, b, d)[1])
        return {"s": gs, "w": gw, "b": gb}

    scalar_check(lambda: layers.causal_conv1d_forward(s, w, b, d)[0], bwd, {"s": s, "w": w, "b": b}, rng)


def gated_params(rng, ci, co, k=3, res=True):
    p = {"L.f.w": rng.normal((co, ci, k)) * 0.5, "L.f.b": rng.normal((co,)) * 0.1,
         "L.g.w": rng.normal((co, ci, k)) * 0.5, "L.g.b": rng.normal((co,)) * 0.1}
    if res:
        p["L.res.w"] = rng.normal((co, ci, 1))
        p["L.res.b"] = rng.normal((co,))
    return p


@pytest.mark.parametrize("res", [True, False])
def test_gated_layer_grads(res):
    rng = Rng(9)
    ci, co = (2, 3) if res else (3, 3)
    p = gated_params(rng, ci, co, res=res)
    s = rng.normal((2, ci, 9))

    def bwd(G):
        gs, grads = layers.gated_layer_backward(G, layers.gated_layer_forward(s, p, "L", 2)[1], "L")
        return {"s": gs, **grads}

    scalar_check(lambda: layers.gated_layer_forward(s, p, "L", 2)[0], bwd, {"s": s, **p}, rng)


def test_gated_layer_zero_weights_is_residual_identity():
    p = {k: np.zeros_like(v) for k, v in gated_params(Rng(0), 3, 3, res=False).items()}
    s = Rng(1).normal((1, 3, 8))
    assert np.array_equal(layers.gated_layer_forward(s, p, "L", 1)[0], s)


def test_gated_layer_hand_computed():
    # kernel (0, 0, 1): only the current sample enters, so out = tanh(s) * sigmoid(s) + s
    p = {"L.f.w": np.array([[[0.0, 0.0, 1.0]]]), "L.f.b": np.zeros(1),
         "L.g.w": np.array([[[0.0, 0.0, 1.0]]]), "L.g.b": np.zeros(1)}
    s = np.array([[[0.5, -1.0, 2.0, 0.0, 3.0]]])
    exp = [np.tanh(v) / (1 + np.exp(-v)) + v for v in s.ravel()]
    np.testing.assert_allclose(layers.gated_layer_forward(s, p, "L", 1)[0].ravel(), exp, atol=1e-15)


def test_zas_grad_via_differences():
    rng = Rng(10)
    x = rng.normal((1, 4, 2, 4, 4))
    cfg = ZasConfig(0.5, 2)
    scalar_check(lambda: zas_forward(x, cfg), lambda G: {"x": zas_backward(G, cfg)}, {"x": x}, rng)


# ---- ASF ------------------------------------------------------------------

def test_mask_sums_to_one_and_shift_invariance():
    rng = Rng(11)
    Z = rng.normal((2, 4, 5, 6, 6)) * 3
    out, _ = asf_forward(Z, init_asf_params(rng, 4))
    assert np.max(np.abs(out.mask.sum(axis=(-2, -1)) - 1)) <= 1e-12
    logits = rng.normal((2, 1, 5, 6, 6))
    assert np.max(np.abs(spatial_softmax(logits) - spatial_softmax(logits + 17.0))) <= 1e-12


def test_uniform_mask_gives_spatial_mean():
    Z = Rng(12).normal((1, 2, 3, 4, 4))
    out, _ = asf_forward(Z, {}, uniform=True)
    np.testing.assert_allclose(out.z, Z.mean(axis=(-2, -1)), atol=1e-14)


def test_constant_logits_uniform_mask():
    rng = Rng(13)
    Z = rng.normal((1, 2, 3, 4, 4))
    p = init_asf_params(rng, 2)
    p = {k: np.zeros_like(v) for k, v in p.items()}
    out, _ = asf_forward(Z, p)
    np.testing.assert_allclose(out.mask, 1 / 16, atol=1e-15)
    np.testing.assert_allclose(out.z, Z.mean(axis=(-2, -1)), atol=1e-14)


def test_constant_over_time_gives_zero_derivative():
    rng = Rng(14)
    Z = np.repeat(rng.normal((1, 3, 1, 4, 4)), 5, axis=2)
    out, _ = asf_forward(Z, init_asf_params(rng, 3))
    assert np.all(out.v == 0)


def test_peaked_logit_selects_pixel():
    mp.dps = 50
    # logit 50 at one pixel of 16, others 0: each off-peak weight is e^-50 / (1 + 15 e^-50)
    off = float(mp.exp(-50) / (1 + 15 * mp.exp(-50)))
    logits = np.zeros((1, 1, 1, 4, 4))
    logits[..., 2, 1] = 50.0
    m = spatial_softmax(logits)
    rest = np.delete(m.ravel(), 2 * 4 + 1)
    np.testing.assert_allclose(rest, off, rtol=1e-12)
    Z = Rng(15).uniform((1, 2, 1, 4, 4))
    z = np.einsum("bcthw,bthw->bct", Z, m[:, 0])
    assert np.max(np.abs(z[0, :, 0] - Z[0, :, 0, 2, 1])) <= 1e-12


def test_convex_combination_and_telescoping():
    rng = Rng(16)
    Z = rng.normal((2, 3, 6, 5, 5))
    out, _ = asf_forward(Z, init_asf_params(rng, 3))
    assert np.all(out.z >= Z.min(axis=(-2, -1)) - 1e-12)
    assert np.all(out.z <= Z.max(axis=(-2, -1)) + 1e-12)
    assert np.array_equal(out.v[:, :, 1:], out.z[:, :, 1:] - out.z[:, :, :-1])
    assert np.allclose(out.v[:, :, 1:].sum(axis=-1), out.z[:, :, -1] - out.z[:, :, 0], atol=1e-13)
    assert np.array_equal(out.z_cat, np.concatenate([out.z, out.v], axis=1))


def test_asf_gradients_small_instance():
    rng = Rng(17)
    Z = rng.normal((1, 2, 3, 2, 2))
    p = init_asf_params(rng, 2)

    def bwd(G):
        gZ, grads = asf_backward(G, asf_forward(Z, p)[1])
        return {"Z": gZ, **grads}

    scalar_check(lambda: asf_forward(Z, p)[0].z_cat, bwd, {"Z": Z, **p}, rng)


def test_asf_zero_upstream_gives_zero_grads():
    rng = Rng(18)
    Z = rng.normal((1, 2, 3, 3, 3))
    p = init_asf_params(rng, 2)
    out, cache = asf_forward(Z, p)
    gZ, grads = asf_backward(np.zeros_like(out.z_cat), cache)
    assert not np.any(gZ) and not any(np.any(g) for g in grads.values())


def test_asf_missing_cache():
    with pytest.raises(RuntimeError):
        asf_backward(np.zeros((1, 4, 3)), None)


def test_softmax_jacobian_rows_sum_to_zero():
    m = spatial_softmax(Rng(19).normal((1, 1, 1, 3, 3))).ravel()
    J = softmax_jacobian(m)
    assert np.max(np.abs(J.sum(axis=1))) <= 1e-15
