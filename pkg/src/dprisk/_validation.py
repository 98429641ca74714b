"""Input checks shared by the estimators and pipeline functions."""

from __future__ import annotations

from collections.abc import Iterable

import numpy as np
import pandas as pd

from .exceptions import InputError, SchemaError


def check_frame(X, required: Iterable[str], name: str = "X") -> pd.DataFrame:
    """Return ``X`` as a DataFrame after checking that ``required`` columns exist."""
    if not isinstance(X, pd.DataFrame):
        raise InputError(f"{name} must be a pandas DataFrame, got {type(X).__name__}")
    missing = [c for c in required if c not in X.columns]
    if missing:
        raise SchemaError(f"{name} is missing columns: {', '.join(missing)}")
    return X


def check_no_missing(X: pd.DataFrame, columns: Iterable[str], name: str = "X") -> None:
    bad = [c for c in columns if X[c].isna().any()]
    if bad:
        raise InputError(f"{name} has missing values in: {', '.join(bad)}")


def check_binary_labels(y, name: str = "y") -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise InputError(f"{name} must be one-dimensional")
    if y.dtype == object or pd.isna(y).any():
        raise InputError(f"{name} contains missing or non-numeric labels")
    y = y.astype(float)
    if not np.isin(y, (0.0, 1.0)).all():
        raise InputError(f"{name} must contain only 0/1 labels")
    return y


def check_matrix(X, name: str = "X") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise InputError(f"{name} must be two-dimensional, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise InputError(f"{name} contains NaN or infinite values")
    return X
