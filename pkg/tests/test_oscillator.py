import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from mpmath import mp, mpf

from phasenet.oscillator import (BoundParams, OscillatorParams, UnstableSystemError, WaveParams,
                                 discrepancy_term, discretize, empirical_rademacher, fir_convolve,
                                 fir_length_for_eps, impulse_response, kernel_constants,
                                 rademacher_bound, recommended_R, simulate_damped_wave_1d,
                                 ssm_rollout, target_risk_bound, wasserstein1_empirical,
                                 wave_energy)
from phasenet.tensor_core import Rng


def unit_system():
    return discretize(OscillatorParams(alpha=1.0, omega=1.0, dt=1.0))


def test_discretize_closed_form():
    m = unit_system()
    np.testing.assert_allclose(m.A, [[0.5, 0.5], [-0.5, 0.5]], atol=1e-15)
    np.testing.assert_allclose(m.B, [0.5, 0.5], atol=1e-15)
    np.testing.assert_array_equal(m.C, [1.0, 0.0])


def test_discretize_undamped_small_omega_limit():
    m = discretize(OscillatorParams(alpha=0.0, omega=1e-9, dt=0.5))
    np.testing.assert_allclose(m.A, [[1, 0.5], [0, 1]], atol=1e-15)
    np.testing.assert_allclose(m.B, [0.25, 0.5], atol=1e-15)


def test_spectral_radius_from_characteristic_polynomial():
    A = unit_system().A
    # lambda^2 - tr(A) lambda + det(A) = 0 -> |lambda|^2 = det(A) for complex roots
    tr, det = np.trace(A), np.linalg.det(A)
    assert tr * tr < 4 * det
    assert abs(unit_system().spectral_radius - math.sqrt(det)) < 1e-12
    assert abs(unit_system().spectral_radius - math.sqrt(0.5)) < 1e-12


def test_zero_omega_rejected():
    with pytest.raises(ValueError):
        OscillatorParams(alpha=1.0, omega=0.0, dt=0.1)


def test_rollout_impulse():
    a = np.zeros(6)
    a[0] = 1.0
    z = ssm_rollout(unit_system(), a)
    np.testing.assert_allclose(z[:3], [0.5, 0.5, 0.25], atol=1e-15)


def test_rollout_zero_forcing():
    assert np.all(ssm_rollout(unit_system(), np.zeros(20)) == 0)


def test_rollout_bounded_long_horizon():
    m = discretize(OscillatorParams(1.0, 2 * math.pi, 1 / 30))
    a = Rng(0).uniform((10_000,), -1, 1)
    K, rho, C0, B0 = kernel_constants(m)
    bound = C0 * K * B0 / (1 - rho)
    assert np.max(np.abs(ssm_rollout(m, a))) <= bound


def matpow_kernel(m, R):
    out, P = [], np.eye(2)
    for _ in range(R):
        out.append(float(m.C @ P @ m.B))
        P = P @ m.A
    return np.array(out)


@pytest.mark.parametrize("alpha,omega", [(1.0, 1.0), (0.3, 4.0), (4.5, 0.2)])
def test_impulse_response_matches_matrix_power(alpha, omega):
    m = discretize(OscillatorParams(alpha, omega, 1 / 30))
    k = impulse_response(m, 200)
    np.testing.assert_allclose(k.g, matpow_kernel(m, 200), rtol=0, atol=1e-12)


def test_impulse_response_r1():
    p = OscillatorParams(0.7, 3.0, 0.1)
    k = impulse_response(discretize(p), 1)
    assert k.g.tolist() == pytest.approx([p.dt ** 2 / (1 + p.alpha * p.dt)], abs=1e-15)


def test_impulse_response_example():
    assert impulse_response(unit_system(), 3).g.tolist() == pytest.approx([0.5, 0.5, 0.25], abs=1e-15)


def test_tail_bound_dominates_extended_sum():
    m = unit_system()
    k = impulse_response(m, 40)
    tail = np.sum(np.abs(matpow_kernel(m, 400)[40:]))
    assert tail <= k.tail_bound
    K, rho, C0, B0 = kernel_constants(m)
    assert k.tail_bound <= C0 * K * B0 / (1 - rho) * rho ** 40 * (1 + 1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 5.0), st.floats(0.05, 5.0), st.integers(1, 80))
def test_tail_bound_sound_property(alpha, omega, R):
    m = discretize(OscillatorParams(alpha, omega, 1 / 30))
    k = impulse_response(m, R)
    long = impulse_response(m, R + 4000).g
    assert np.sum(np.abs(long[R:])) <= k.tail_bound


def test_unstable_system_error():
    from phasenet.oscillator import StateMatrices
    m = StateMatrices(np.array([[1.1, 0.0], [0.0, 0.5]]), np.array([1.0, 0.0]), np.array([1.0, 0.0]))
    with pytest.raises(UnstableSystemError):
        impulse_response(m, 4)


def brute_min_R(b):
    r = 1
    while b.U * b.M_in * b.rho ** r / (1 - b.rho) > b.epsilon:
        r += 1
    return r


def test_fir_length_examples():
    assert fir_length_for_eps(BoundParams(K=1, rho=0.9, epsilon=0.01)) == 66
    # ceil(log(1000/0.9)/log 10) = ceil(3.046) = 4 by the formula, but 0.1^3/0.9 = 1.11e-3 <= 0.01
    # already holds: log(1/(0.01*0.9))/log(10) = 2.046 -> 3
    b = BoundParams(K=1, rho=0.1, epsilon=0.01)
    assert fir_length_for_eps(b) == 3 == brute_min_R(b)
    big = BoundParams(K=1, rho=0.5, epsilon=10.0)
    assert fir_length_for_eps(big) == 1


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 0.98), st.floats(1e-8, 1.0), st.floats(0.5, 20.0))
def test_fir_length_is_minimal(rho, eps, K):
    b = BoundParams(K=K, rho=rho, epsilon=eps)
    assert fir_length_for_eps(b) == brute_min_R(b)


def test_fir_convolve_identity_and_causality():
    a = Rng(3).normal((300,))
    assert np.array_equal(fir_convolve(np.array([1.0]), a), a)
    k = impulse_response(discretize(OscillatorParams(1.0, 2.0, 1 / 30)), 64)
    b = a.copy()
    b[100] += 5.0
    assert np.array_equal(fir_convolve(k, a)[:100], fir_convolve(k, b)[:100])


def test_fir_vs_rollout_within_tail():
    m = discretize(OscillatorParams(0.8, 6.0, 1 / 30))
    a = Rng(4).uniform((512,), -1, 1)
    for R in (8, 32, 128):
        k = impulse_response(m, R)
        assert np.max(np.abs(fir_convolve(k, a) - ssm_rollout(m, a))) <= k.tail_bound * np.max(np.abs(a))


def test_wave_cfl_rejected():
    with pytest.raises(ValueError):
        WaveParams(alpha=0.0, c=1.0, dx=0.01, dt=0.02, n_points=11)


def test_wave_zero_initial_stays_zero():
    w = WaveParams(alpha=0.3, c=1.0, dx=0.01, dt=0.005, n_points=51)
    assert np.all(simulate_damped_wave_1d(w, np.zeros(51), np.zeros(51), 100) == 0)


def test_wave_energy_conserved_undamped():
    w = WaveParams(alpha=0.0, c=1.0, dx=0.01, dt=0.005, n_points=101)
    x = np.linspace(0, 1, 101)
    f = simulate_damped_wave_1d(w, np.sin(np.pi * x), np.zeros(101), 1000)
    e = wave_energy(w, f)
    assert np.max(np.abs(e - e[0])) / e[0] <= 1e-6


def test_wave_energy_monotone_damped():
    w = WaveParams(alpha=2.0, c=1.0, dx=0.01, dt=0.008, n_points=101)
    x = np.linspace(0, 1, 101)
    f = simulate_damped_wave_1d(w, np.sin(2 * np.pi * x), np.zeros(101), 1000)
    e = wave_energy(w, f)
    assert np.all(np.diff(e) <= 0)
    assert e[-1] < 0.5 * e[0]


def test_rademacher_bound_high_precision():
    mp.dps = 40
    ref = float(2 * mp.sqrt(2 * mp.log(16) / mpf(1000)))
    b = BoundParams(K=1, rho=0.5, M_in=1, R=8, n=1000)
    assert rademacher_bound(b) == pytest.approx(ref, rel=1e-14)
    assert round(rademacher_bound(b), 6) == 0.148932


def test_rademacher_bound_scalings():
    b = BoundParams(K=1, rho=0.5, R=8, n=1000)
    b4 = BoundParams(K=1, rho=0.5, R=8, n=4000)
    assert rademacher_bound(b4) == pytest.approx(rademacher_bound(b) / 2, rel=1e-14)
    b1 = BoundParams(K=1, rho=0.5, R=1, n=50)
    assert rademacher_bound(b1) == pytest.approx(2 * math.sqrt(2 * math.log(2) / 50), rel=1e-14)


def test_empirical_rademacher_trivial_cases():
    rng = Rng(0)
    assert empirical_rademacher(rng, np.zeros((10, 4)), 2.0, draws=50) == 0.0
    phi = np.array([[0.3, -0.7, 0.1]])
    assert empirical_rademacher(rng, phi, 2.0, draws=20) == pytest.approx(2.0 * 0.7, abs=1e-15)


def test_empirical_rademacher_below_bound():
    rng = Rng(8)
    b = BoundParams(K=1, rho=0.5, M_in=1, R=16, n=500)
    phi = rng.uniform((500, 16), -1, 1)
    est, se = empirical_rademacher(rng, phi, b.L, draws=10_000, return_stderr=True)
    assert est <= rademacher_bound(b) + 3 * se


def test_target_risk_bound_parts():
    b = BoundParams(K=1, rho=0.5, L_ell=1)
    assert discrepancy_term(b, 0.2) == pytest.approx(0.4, abs=1e-15)
    base = target_risk_bound(b, 0.1, 0.2)
    assert target_risk_bound(b, 0.1, 0.4) - base == pytest.approx(discrepancy_term(b, 0.2), abs=1e-12)
    # slack at n=1e8, R=1e3 is 2*rad + conf = 1.967e-3; it drops below 1e-3 by n=1e9
    lim8 = BoundParams(K=1, rho=0.5, n=10 ** 8, R=1000)
    slack8 = 4 * math.sqrt(2 * math.log(2000) / 1e8) + 3 * math.sqrt(math.log(40) / 2e8)
    assert target_risk_bound(lim8, 0.25, 0.0) - 0.25 == pytest.approx(slack8, rel=1e-9)
    lim9 = BoundParams(K=1, rho=0.5, n=10 ** 9, R=1000)
    assert abs(target_risk_bound(lim9, 0.25, 0.0) - 0.25) < 1e-3


def test_target_risk_bound_formula():
    b = BoundParams(K=2, rho=0.6, M_in=1.5, n=300, R=10, L_ell=0.7, delta=0.1)
    exp = (0.05 + 2 * 0.7 * rademacher_bound(b) + 3 * math.sqrt(math.log(2 / 0.1) / 600)
           + b.U * 1.5 / 0.4 * 0.6 ** 10 + 0.7 * b.U / 0.4 * 0.3)
    assert target_risk_bound(b, 0.05, 0.3) == pytest.approx(exp, rel=1e-14)


def test_wasserstein1():
    assert wasserstein1_empirical([0, 1], [0, 3]) == 1.0
    x = Rng(1).normal((50,))
    assert wasserstein1_empirical(x, x) == 0.0
    assert wasserstein1_empirical(x + 2.5, x) == pytest.approx(2.5, abs=1e-14)
    with pytest.raises(ValueError):
        wasserstein1_empirical([1, 2], [1])


def test_recommended_R():
    assert recommended_R(1000, 0.5) == 20
    assert recommended_R(1000, 0.1) == 6
    assert recommended_R(math.e, 1 / math.e) == 2


def test_bound_params_derived_fields_consistent():
    b = BoundParams(K=2.0, rho=0.75, C0=0.5, B0=3.0)
    assert b.U == 3.0
    assert b.L == pytest.approx(12.0)
    d = b.to_dict()
    assert BoundParams.from_dict(d) == b
    with pytest.raises(ValueError):
        BoundParams(rho=1.0)
    with pytest.raises(ValueError):
        BoundParams.from_dict({"rho": 0.5, "bogus": 1})
