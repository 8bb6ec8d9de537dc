"""Input checks shared by the estimators and the CLI."""

import numpy as np
from sklearn.utils.validation import check_array


def check_clips(X, name="X"):
    """Batch of clips as float64 [N, C, T, H, W]; a single [C, T, H, W] clip is promoted."""
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=np.float64,
                    ensure_all_finite=True, input_name=name)
    if X.ndim == 4:
        X = X[None]
    if X.ndim != 5:
        raise ValueError(f"{name} must have shape [N, C, T, H, W], got {X.shape}")
    return np.ascontiguousarray(X)


def check_series(y, name="y", min_length=2):
    """Batch of series as float64 [N, T]; a 1D series is promoted."""
    y = check_array(y, ensure_2d=False, dtype=np.float64, ensure_all_finite=True, input_name=name)
    if y.ndim == 1:
        y = y[None]
    if y.ndim != 2:
        raise ValueError(f"{name} must have shape [N, T], got {y.shape}")
    if y.shape[1] < min_length:
        raise ValueError(f"{name} needs at least {min_length} samples per series")
    return y


def check_paired(X, y):
    X = check_clips(X)
    y = check_series(y)
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} clips but y has {y.shape[0]} series")
    if X.shape[2] != y.shape[1]:
        raise ValueError(f"clip length {X.shape[2]} differs from target length {y.shape[1]}")
    return X, y
