"""scikit-learn compatible wrappers around the core operations."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .evaluation import DEFAULT_BAND, estimate_hr, metrics, pearson_r
from .model import ModelConfig, PhaseNet, load_model, save_checkpoint
from .oscillator import (BoundParams, OscillatorParams, discretize, fir_convolve,
                         fir_length_for_eps, impulse_response, kernel_constants)
from .training import TrainConfig, predict, train
from .validation import check_clips, check_paired, check_series
from .zas import ZasConfig, zas_forward


class PhaseNetRegressor(RegressorMixin, BaseEstimator):
    """Predict a pulse waveform [N, T] from video windows [N, 3, T, H, W].

    ``score`` returns the mean Pearson correlation between predicted and
    true waveforms, which is the quantity the training loss optimizes.
    """

    def __init__(self, est_channels=(8, 16, 32), zas_p=0.25, zas_b=2, use_zas=True,
                 use_asf=True, tcn_layers=3, tcn_channels=16, tcn_kernel=3,
                 dilation_base=2, epochs=15, batch_size=4, learning_rate=1e-4,
                 lam=0.1, physics_alpha=1.0, physics_hr_hz=1.65, fps=30.0,
                 random_state=42):
        self.est_channels = est_channels
        self.zas_p = zas_p
        self.zas_b = zas_b
        self.use_zas = use_zas
        self.use_asf = use_asf
        self.tcn_layers = tcn_layers
        self.tcn_channels = tcn_channels
        self.tcn_kernel = tcn_kernel
        self.dilation_base = dilation_base
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lam = lam
        self.physics_alpha = physics_alpha
        self.physics_hr_hz = physics_hr_hz
        self.fps = fps
        self.random_state = random_state

    def _model_config(self, shape):
        _, C, T, H, W = shape
        return ModelConfig(in_channels=C, est_channels=tuple(self.est_channels),
                           zas_p=self.zas_p, zas_b=self.zas_b, use_zas=self.use_zas,
                           use_asf=self.use_asf, tcn_layers=self.tcn_layers,
                           tcn_channels=self.tcn_channels, tcn_kernel=self.tcn_kernel,
                           dilation_base=self.dilation_base, T=T, H=H, W=W)

    def _train_config(self):
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           learning_rate=self.learning_rate, lam=self.lam,
                           seed=self.random_state, physics_alpha=self.physics_alpha,
                           physics_hr_hz=self.physics_hr_hz, fps=self.fps)

    def fit(self, X, y, log_path=None):
        X, y = check_paired(X, y)
        self.model_ = PhaseNet(self._model_config(X.shape), seed=self.random_state)
        self.history_ = train(self.model_, X, y, self._train_config(), log_path=log_path)
        self.n_params_ = self.model_.params.total_params
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return predict(self.model_, check_clips(X))

    def score(self, X, y, sample_weight=None):
        X, y = check_paired(X, y)
        P = self.predict(X)
        rs = np.array([pearson_r(p, t) or 0.0 for p, t in zip(P, y)])
        return float(np.average(rs, weights=sample_weight))

    def save(self, path):
        check_is_fitted(self, "model_")
        save_checkpoint(path, self.model_.params, self.model_.cfg)

    @classmethod
    def load(cls, path):
        model = load_model(path)
        c = model.cfg
        est = cls(est_channels=c.est_channels, zas_p=c.zas_p, zas_b=c.zas_b, use_zas=c.use_zas,
                  use_asf=c.use_asf, tcn_layers=c.tcn_layers, tcn_channels=c.tcn_channels,
                  tcn_kernel=c.tcn_kernel, dilation_base=c.dilation_base)
        est.model_ = model
        est.n_params_ = model.params.total_params
        return est


class AxialSwapper(TransformerMixin, BaseEstimator):
    """Stateless ZAS transform; it is its own inverse."""

    def __init__(self, p=0.25, b=2):
        self.p = p
        self.b = b

    def fit(self, X, y=None):
        check_clips(X)
        self.config_ = ZasConfig(self.p, self.b)
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        return zas_forward(check_clips(X), self.config_)

    inverse_transform = transform


class OscillatorFilter(TransformerMixin, BaseEstimator):
    """Filter forcing series [N, T] through the oscillator's truncated impulse response.

    With ``R=None`` the filter length is the smallest one whose certified
    truncation error stays below ``epsilon`` for inputs bounded like the
    training data.
    """

    def __init__(self, alpha=1.0, omega=2 * np.pi * 1.2, dt=1 / 30, R=None, epsilon=1e-6):
        self.alpha = alpha
        self.omega = omega
        self.dt = dt
        self.R = R
        self.epsilon = epsilon

    def fit(self, X, y=None):
        X = check_series(X, min_length=1)
        self.system_ = discretize(OscillatorParams(self.alpha, self.omega, self.dt))
        R = self.R
        if R is None:
            K, rho, C0, B0 = kernel_constants(self.system_)
            m_in = float(np.max(np.abs(X))) or 1.0
            R = fir_length_for_eps(BoundParams(K=K, rho=rho, C0=C0, B0=B0, M_in=m_in,
                                               epsilon=self.epsilon))
        self.kernel_ = impulse_response(self.system_, int(R))
        return self

    def transform(self, X):
        check_is_fitted(self, "kernel_")
        X = check_series(X, min_length=1)
        return np.stack([fir_convolve(self.kernel_, x) for x in X])


class HeartRateEstimator(BaseEstimator):
    """Map waveforms [N, T] to heart rates (bpm) via the in-band Welch peak."""

    def __init__(self, fps=30.0, band=DEFAULT_BAND):
        self.fps = fps
        self.band = band

    def fit(self, X=None, y=None):
        self.fitted_ = True
        return self

    def predict(self, X):
        X = check_series(X, min_length=32)
        return np.array([estimate_hr(x, self.fps, tuple(self.band)).hr_bpm for x in X])

    def score(self, X, y):
        """Negative MAE in bpm (higher is better)."""
        return -metrics(self.predict(X), np.asarray(y, dtype=np.float64)).mae_bpm
