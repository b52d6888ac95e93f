"""Input validation shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, check_X_y

from .data import Dataset
from .exceptions import InputError, ShapeError


def check_features(X, n_features: int = None) -> np.ndarray:
    try:
        X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if n_features is not None and X.shape[1] != n_features:
        raise ShapeError(f"X has {X.shape[1]} features, expected {n_features}")
    return X


def as_dataset(X, y=None, ids=None, n_classes=None) -> Dataset:
    """Coerce ``(X, y, ids)`` or a :class:`Dataset` into a validated dataset."""
    if isinstance(X, Dataset):
        return X
    try:
        X, y = check_X_y(X, y, dtype=np.float64, ensure_all_finite=True)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    y = np.asarray(y)
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise InputError("labels must be integer class indices")
        y = y.astype(np.int64)
    return Dataset(X, y, ids, None, n_classes)
