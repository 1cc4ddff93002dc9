"""Input validation helpers used throughout the package.

The checks raise :class:`~lagope.errors.InvalidInputError` (or
:class:`~lagope.errors.InvalidConfigError` for hyperparameters) with messages
that name the offending argument, mirroring sklearn-style validation.
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidConfigError, InvalidInputError

SIMPLEX_ATOL = 1e-12


def check_vector(x, name: str, length: int | None = None) -> np.ndarray:
    """Coerce ``x`` to a 1-D float array, optionally enforcing its length."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise InvalidInputError(f"`{name}` must be 1-dimensional, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise InvalidInputError(
            f"`{name}` must have length {length}, got {arr.shape[0]}"
        )
    return arr


def check_matrix(x, name: str, n_cols: int | None = None) -> np.ndarray:
    """Coerce ``x`` to a 2-D float array, optionally enforcing its column count."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 2:
        raise InvalidInputError(f"`{name}` must be 2-dimensional, got shape {arr.shape}")
    if n_cols is not None and arr.shape[1] != n_cols:
        raise InvalidInputError(
            f"`{name}` must have {n_cols} columns, got {arr.shape[1]}"
        )
    return arr


def check_actions(a, name: str, num_actions: int) -> np.ndarray:
    """Coerce ``a`` to dense integer action indices in ``[0, num_actions)``."""
    arr = np.asarray(a)
    if not np.issubdtype(arr.dtype, np.integer):
        rounded = np.rint(np.asarray(arr, dtype=float))
        if not np.array_equal(rounded, np.asarray(arr, dtype=float)):
            raise InvalidInputError(f"`{name}` must contain integer action indices")
        arr = rounded.astype(np.int64)
    else:
        arr = arr.astype(np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= num_actions):
        raise InvalidInputError(
            f"`{name}` must lie in [0, {num_actions}), got range "
            f"[{arr.min()}, {arr.max()}]"
        )
    return arr


def check_scalar_range(
    value,
    name: str,
    low: float = -np.inf,
    high: float = np.inf,
    low_inclusive: bool = True,
    high_inclusive: bool = True,
) -> float:
    """Validate a scalar hyperparameter against an interval."""
    v = float(value)
    ok_low = v >= low if low_inclusive else v > low
    ok_high = v <= high if high_inclusive else v < high
    if not (ok_low and ok_high and np.isfinite(v) or (high == np.inf and ok_low)):
        lo = "[" if low_inclusive else "("
        hi = "]" if high_inclusive else ")"
        raise InvalidConfigError(f"`{name}` must be in {lo}{low}, {high}{hi}, got {value}")
    return v


def check_simplex(p, name: str, atol: float = SIMPLEX_ATOL) -> np.ndarray:
    """Validate that each row of ``p`` is a probability vector."""
    arr = np.asarray(p, dtype=float)
    rows = arr.reshape(-1, arr.shape[-1])
    if (rows < 0).any():
        raise InvalidInputError(f"`{name}` has negative entries")
    if not np.allclose(rows.sum(axis=1), 1.0, rtol=0.0, atol=atol):
        worst = float(np.abs(rows.sum(axis=1) - 1.0).max())
        raise InvalidInputError(f"`{name}` rows must sum to 1 (worst deviation {worst:.3e})")
    return arr


def floor_simplex(p: np.ndarray, p_min: float) -> np.ndarray:
    """Project probabilities onto the simplex with every entry >= ``p_min``.

    Entries are clipped to ``[p_min, 1]``, renormalized, and then mixed with the
    uniform floor via ``(1 - A*p_min) * p + p_min`` so the result sums to one
    exactly while every entry stays at or above ``p_min``.
    """
    arr = np.asarray(p, dtype=float)
    n_actions = arr.shape[-1]
    if n_actions * p_min >= 1.0:
        raise InvalidConfigError(
            f"p_min={p_min} is infeasible for {n_actions} actions"
        )
    clipped = np.clip(arr, p_min, 1.0)
    normalized = clipped / clipped.sum(axis=-1, keepdims=True)
    return (1.0 - n_actions * p_min) * normalized + p_min
