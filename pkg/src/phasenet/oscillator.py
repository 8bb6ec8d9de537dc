"""Damped oscillator dynamics, its causal-convolution form, and risk bounds.

The latent pulse obeys ``z'' + alpha z' + omega^2 z = u``.  Semi-implicit
Euler turns it into the LTI recursion ``x_t = A x_{t-1} + B a_t``,
``z_t = C x_t``, whose impulse response ``g[m] = C A^m B`` is the kernel a
causal temporal convolution has to learn.  Truncating that kernel at ``R``
taps costs at most ``U rho^R / (1 - rho)`` per unit of input amplitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class UnstableSystemError(ValueError):
    """Raised when a kernel bound is requested for a system with rho(A) >= 1."""


@dataclass(frozen=True)
class WaveParams:
    alpha: float
    c: float
    dx: float
    dt: float
    n_points: int

    def __post_init__(self):
        if self.alpha < 0 or self.c <= 0 or self.dx <= 0 or self.dt <= 0:
            raise ValueError("need alpha >= 0 and positive c, dx, dt")
        if self.n_points < 3:
            raise ValueError("n_points must be at least 3")
        if self.courant > 1.0:
            raise ValueError(f"CFL violated: c*dt/dx = {self.courant:.4g} > 1")

    @property
    def courant(self):
        return self.c * self.dt / self.dx


@dataclass(frozen=True)
class OscillatorParams:
    alpha: float
    omega: float
    dt: float

    def __post_init__(self):
        if not (self.alpha >= 0 and self.omega > 0 and self.dt > 0):
            raise ValueError(
                f"invalid oscillator params alpha={self.alpha}, omega={self.omega}, dt={self.dt}"
            )


@dataclass(frozen=True)
class StateMatrices:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    @property
    def spectral_radius(self):
        return spectral_radius(self.A)


@dataclass(frozen=True)
class FirKernel:
    g: np.ndarray
    rho: float
    tail_bound: float
    K: float = 1.0

    @property
    def R(self):
        return len(self.g)


@dataclass
class BoundParams:
    """Constants of the FIR generalization analysis.

    ``U`` and ``L`` are derived on access so they can never disagree with
    ``K``, ``C0``, ``B0`` and ``rho``.
    """

    K: float = 1.0
    rho: float = 0.5
    C0: float = 1.0
    B0: float = 1.0
    M_in: float = 1.0
    epsilon: float = 1e-3
    n: int = 1000
    R: int = 8
    L_ell: float = 1.0
    delta: float = 0.05

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        for name in ("K", "C0", "B0", "M_in"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def U(self):
        return self.C0 * self.K * self.B0

    @property
    def L(self):
        return self.U / (1.0 - self.rho)

    @property
    def gamma(self):
        return self.L * self.M_in

    def to_dict(self):
        return {
            "K": self.K, "rho": self.rho, "C0": self.C0, "B0": self.B0,
            "M_in": self.M_in, "epsilon": self.epsilon, "n": self.n, "R": self.R,
            "L_ell": self.L_ell, "delta": self.delta, "U": self.U, "L": self.L,
        }

    @classmethod
    def from_dict(cls, d):
        keys = ("K", "rho", "C0", "B0", "M_in", "epsilon", "n", "R", "L_ell", "delta")
        unknown = set(d) - set(keys) - {"U", "L"}
        if unknown:
            raise ValueError(f"unknown BoundParams fields: {sorted(unknown)}")
        kw = {k: d[k] for k in keys if k in d}
        # U may be given directly; fold it into K
        if "U" in d and "K" not in d:
            kw["K"] = d["U"] / (d.get("C0", 1.0) * d.get("B0", 1.0))
        return cls(**kw)


def spectral_radius(A):
    return float(np.max(np.abs(np.linalg.eigvals(np.asarray(A, dtype=np.float64)))))


def discretize(p):
    a, w, dt = p.alpha, p.omega, p.dt
    s = 1.0 + a * dt
    A = np.array([[1.0 - w * w * dt * dt / s, dt / s],
                  [-w * w * dt / s, 1.0 / s]])
    B = np.array([dt * dt / s, dt / s])
    C = np.array([1.0, 0.0])
    return StateMatrices(A, B, C)


def ssm_rollout(m, forcing, x0=None):
    """Run the recursion and return ``z_t = C x_t`` for t = 1..T."""
    a = np.asarray(forcing, dtype=np.float64)
    x = np.zeros(2) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    A, B, C = m.A, m.B, m.C
    a00, a01, a10, a11 = A[0, 0], A[0, 1], A[1, 0], A[1, 1]
    b0, b1 = B[0], B[1]
    c0, c1 = C[0], C[1]
    x0_, x1_ = float(x[0]), float(x[1])
    out = np.empty(len(a))
    for t, at in enumerate(a.tolist()):
        x0_, x1_ = a00 * x0_ + a01 * x1_ + b0 * at, a10 * x0_ + a11 * x1_ + b1 * at
        out[t] = c0 * x0_ + c1 * x1_
    return out


def _spectral_norms(stack):
    return np.linalg.svd(stack, compute_uv=False)[..., 0]


def power_growth_constant(A, horizon=256):
    """Smallest K with ||A^m||_2 <= K rho^m, fitted and then made sound.

    The fit takes the max over m <= horizon.  For slowly rotating or slowly
    converging modes the horizon can miss the supremum, so the eigen-
    decomposition supplies the exact sup over the continuous phase (complex
    pair) or the m -> inf limit (real pair).
    """
    A = np.asarray(A, dtype=np.float64)
    rho = spectral_radius(A)
    if rho >= 1.0:
        raise UnstableSystemError(f"spectral radius {rho:.6g} >= 1")
    powers = np.empty((horizon, len(A), len(A)))
    P = np.eye(len(A))
    for m in range(horizon):
        P = P @ A
        powers[m] = P
    norms = _spectral_norms(powers)
    K = max(1.0, float(np.max(norms / rho ** np.arange(1, horizon + 1))))
    lam, V = np.linalg.eig(A)
    if np.linalg.cond(V) < 1e12:
        Vinv = np.linalg.inv(V)
        if np.iscomplexobj(lam) and abs(lam[0].imag) > 0:
            phi = np.linspace(0.0, 2 * math.pi, 2049)
            # V diag(e^{i phi}, e^{-i phi}) V^-1 for every phase at once
            M = np.einsum("ik,pk,kj->pij", V, np.exp(1j * np.outer(phi, [1.0, -1.0])), Vinv).real
            K = max(K, float(np.max(_spectral_norms(M))))
        else:
            keep = np.isclose(np.abs(lam), rho)
            D = np.diag(np.where(keep, np.sign(lam.real), 0.0))
            K = max(K, np.linalg.norm((V @ D @ Vinv).real, 2))
    return float(K) * (1.0 + 1e-12)


def kernel_constants(m):
    """(K, rho, C0, B0) for a discretized system."""
    rho = spectral_radius(m.A)
    K = power_growth_constant(m.A)
    return K, rho, float(np.linalg.norm(m.C)), float(np.linalg.norm(m.B))


def impulse_response(m, R):
    if R < 1:
        raise ValueError("R must be >= 1")
    K, rho, C0, B0 = kernel_constants(m)
    g = np.empty(R)
    x = m.B.copy()
    for k in range(R):
        g[k] = m.C @ x
        x = m.A @ x
    U = C0 * K * B0
    return FirKernel(g=g, rho=rho, tail_bound=U * rho ** R / (1.0 - rho), K=K)


def bound_params_for(m, **kw):
    K, rho, C0, B0 = kernel_constants(m)
    return BoundParams(K=K, rho=rho, C0=C0, B0=B0, **kw)


def fir_length_for_eps(b):
    if b.epsilon <= 0:
        raise ValueError("epsilon must be positive")
    arg = b.K * b.M_in * b.C0 * b.B0 / (b.epsilon * (1.0 - b.rho))
    if arg <= 1.0:
        return 1
    R = math.ceil(math.log(arg) / math.log(1.0 / b.rho))
    # guard ceil against round-off in either direction
    tail = lambda r: b.U * b.M_in * b.rho ** r / (1.0 - b.rho)
    while R > 1 and tail(R - 1) <= b.epsilon:
        R -= 1
    while tail(R) > b.epsilon:
        R += 1
    return max(R, 1)


def fir_convolve(k, forcing):
    g = k.g if isinstance(k, FirKernel) else np.asarray(k, dtype=np.float64)
    a = np.asarray(forcing, dtype=np.float64)
    T, R = len(a), len(g)
    out = np.zeros(T)
    for m in range(min(R, T)):
        out[m:] += g[m] * a[: T - m]
    return out


def simulate_damped_wave_1d(w, p0, v0, steps):
    """Explicit central differences for p_tt + alpha p_t = c^2 p_xx.

    Dirichlet-zero ends.  The damping term is centred in time, which keeps
    the discrete energy non-increasing whenever alpha >= 0.
    Returns an array of shape (steps + 1, n_points).
    """
    p0 = np.asarray(p0, dtype=np.float64)
    v0 = np.asarray(v0, dtype=np.float64)
    if p0.shape != (w.n_points,) or v0.shape != (w.n_points,):
        raise ValueError("initial profiles must have length n_points")
    r2 = w.courant ** 2
    ad = 0.5 * w.alpha * w.dt
    field = np.zeros((steps + 1, w.n_points))
    cur = p0.copy()
    cur[0] = cur[-1] = 0.0
    field[0] = cur
    if steps == 0:
        return field
    lap = np.zeros_like(cur)
    lap[1:-1] = cur[2:] - 2 * cur[1:-1] + cur[:-2]
    # Taylor start: p1 = p0 + dt v0 + dt^2/2 (c^2 p_xx - alpha v0)
    nxt = cur + w.dt * v0 + 0.5 * (r2 * lap - w.alpha * w.dt * w.dt * v0)
    nxt[0] = nxt[-1] = 0.0
    prev, cur = cur, nxt
    field[1] = cur
    for n in range(2, steps + 1):
        lap[1:-1] = cur[2:] - 2 * cur[1:-1] + cur[:-2]
        nxt = (2 * cur - (1 - ad) * prev + r2 * lap) / (1 + ad)
        nxt[0] = nxt[-1] = 0.0
        prev, cur = cur, nxt
        field[n] = cur
    return field


def wave_energy(w, field):
    """Discrete energy per step interval, conserved exactly when alpha = 0.

    E^{n+1/2} = sum(((p^{n+1}-p^n)/dt)^2) dx
                + c^2 sum((p^{n+1}_{i+1}-p^{n+1}_i)(p^n_{i+1}-p^n_i)) / dx
    """
    f = np.asarray(field)
    kin = np.sum(((f[1:] - f[:-1]) / w.dt) ** 2, axis=1) * w.dx
    dxa = np.diff(f[1:], axis=1)
    dxb = np.diff(f[:-1], axis=1)
    pot = w.c ** 2 * np.sum(dxa * dxb, axis=1) / w.dx
    return kin + pot


def rademacher_bound(b):
    if b.R < 1 or b.n < 1:
        raise ValueError("need R >= 1 and n >= 1")
    return b.L * b.M_in * math.sqrt(2.0 * math.log(2 * b.R) / b.n)


def empirical_rademacher(rng, inputs, L, draws=1000, return_stderr=False):
    """Monte-Carlo estimate of (L/n) E_sigma ||sum_i sigma_i phi_i||_inf."""
    phi = np.asarray(inputs, dtype=np.float64)
    if draws < 1:
        raise ValueError("draws must be >= 1")
    n = phi.shape[0]
    vals = np.empty(draws)
    chunk = 256
    for s in range(0, draws, chunk):
        k = min(chunk, draws - s)
        sig = rng.signs((k, n))
        vals[s:s + k] = np.max(np.abs(sig @ phi), axis=1) * (L / n)
    mean = float(vals.mean())
    if return_stderr:
        se = float(vals.std(ddof=1) / math.sqrt(draws)) if draws > 1 else 0.0
        return mean, se
    return mean


def target_risk_bound(b, src_risk, w1, delta=None):
    if w1 < 0:
        raise ValueError("w1 must be >= 0")
    delta = b.delta if delta is None else delta
    return (src_risk
            + 2.0 * b.L_ell * rademacher_bound(b)
            + 3.0 * math.sqrt(math.log(2.0 / delta) / (2.0 * b.n))
            + b.gamma * b.rho ** b.R
            + discrepancy_term(b, w1))


def discrepancy_term(b, w1):
    return b.L_ell * b.L * w1


def wasserstein1_empirical(xs, ys):
    xs = np.sort(np.asarray(xs, dtype=np.float64).ravel())
    ys = np.sort(np.asarray(ys, dtype=np.float64).ravel())
    if xs.shape != ys.shape:
        raise ValueError(f"sample sizes differ: {xs.size} vs {ys.size}")
    return float(np.mean(np.abs(xs - ys)))


def recommended_R(n, rho):
    if n < 2 or not 0 < rho < 1:
        raise ValueError("need n >= 2 and 0 < rho < 1")
    x = 2.0 * math.log(n) / math.log(1.0 / rho)
    # values that are integral up to round-off should not round up
    return max(1, math.ceil(x - 1e-9 * max(1.0, x)))
