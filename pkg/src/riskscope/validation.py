"""Input validation helpers shared across estimators and explainers."""

from __future__ import annotations

import numpy as np


def check_matrix(X) -> np.ndarray:
    """Coerce to a 2-D float array; NaN marks missing values."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {X.shape}")
    if np.isinf(X).any():
        raise ValueError("matrix contains non-finite (inf) values")
    return X


def check_labels(y, n_rows: int) -> np.ndarray:
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(y) != n_rows:
        raise ValueError(f"labels length {len(y)} does not match {n_rows} matrix rows")
    bad = ~np.isin(y, (0.0, 1.0))
    if bad.any():
        raise ValueError("labels must be binary 0/1")
    return y


def check_vector(X: np.ndarray, n_features: int) -> np.ndarray:
    if X.shape[-1] != n_features:
        raise ValueError(f"vector has {X.shape[-1]} features, model expects {n_features}")
    return X
