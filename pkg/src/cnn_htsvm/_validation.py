"""Input validation helpers shared by the estimators."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_images(X) -> np.ndarray:
    """Coerce to a finite float64 array of shape (n, rows, cols)."""
    X = check_array(X, ensure_2d=False, allow_nd=True, dtype=np.float64,
                    ensure_min_samples=0)
    if X.ndim != 3:
        raise ValueError(f"expected images of shape (n, rows, cols), got {X.shape}")
    return X


def check_features(X, n_features: int | None = None) -> np.ndarray:
    X = check_array(X, dtype=np.float64, ensure_min_samples=0)
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(
            f"X has {X.shape[1]} features, but the model expects {n_features}")
    return X


def check_labels(y, n_samples: int) -> np.ndarray:
    y = np.asarray(y, dtype=object)
    if y.ndim != 1:
        raise ValueError(f"labels must be 1-D, got shape {y.shape}")
    if len(y) != n_samples:
        raise ValueError(f"{len(y)} labels for {n_samples} samples")
    if n_samples == 0:
        raise ValueError("empty training set")
    return y


def encode_labels(y) -> tuple[np.ndarray, np.ndarray]:
    """Sorted class array and integer codes (``classes[codes] == y``)."""
    classes, codes = np.unique(np.asarray(y, dtype=str), return_inverse=True)
    return classes.astype(object), codes
