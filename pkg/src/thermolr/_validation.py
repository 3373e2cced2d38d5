"""Input validation helpers shared across modules."""

import numbers

import numpy as np
from sklearn.utils.validation import check_array


def check_matrix(X, *, name="X", non_negative=False, min_rows=1, min_cols=1):
    """Return ``X`` as a finite float64 2-D array.

    Raises ``ValueError`` for non-finite values, wrong rank, or negative
    entries when ``non_negative`` is set.
    """
    X = check_array(
        X,
        dtype=np.float64,
        ensure_all_finite=True,
        ensure_min_samples=min_rows,
        ensure_min_features=min_cols,
        input_name=name,
    )
    if non_negative and np.any(X < 0):
        raise ValueError(f"{name} must be non-negative elementwise")
    return X


def check_vector(v, *, name="v", min_len=1):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {v.shape}")
    if v.size < min_len:
        raise ValueError(f"{name} needs at least {min_len} entries")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite values")
    return v


def check_mask(mask, shape, *, name="mask"):
    mask = np.asarray(mask)
    if mask.shape != tuple(shape):
        raise ValueError(f"{name} has shape {mask.shape}, expected {tuple(shape)}")
    if mask.dtype != bool:
        if not np.all((mask == 0) | (mask == 1)):
            raise ValueError(f"{name} must be binary (0/1)")
        mask = mask.astype(bool)
    return mask


def check_positive(value, name, *, strict=True, integer=False):
    kind = numbers.Integral if integer else numbers.Real
    if isinstance(value, bool) or not isinstance(value, kind):
        raise TypeError(f"{name} must be {'an integer' if integer else 'a real number'}, got {value!r}")
    if strict and not value > 0:
        raise ValueError(f"{name} must be > 0, got {value}")
    if not strict and not value >= 0:
        raise ValueError(f"{name} must be >= 0, got {value}")
    return value
