"""Small argument-validation helpers shared across the package."""

from __future__ import annotations

import numpy as np

__all__ = [
    "check_finite_array",
    "check_positive_scalar",
    "check_probability_vector",
    "check_square_matrix",
]


def check_finite_array(arr: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_positive_scalar(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0.0:
        raise ValueError(f"{name} must be a positive finite scalar, got {value!r}")
    return value


def check_probability_vector(vec: np.ndarray, name: str, atol: float = 1e-8) -> np.ndarray:
    vec = check_finite_array(vec, name)
    if vec.ndim != 1:
        raise ValueError(f"{name} must be 1-D")
    if np.any(vec < -atol) or abs(vec.sum() - 1.0) > atol:
        raise ValueError(f"{name} must be a probability vector")
    return vec


def check_square_matrix(mat: np.ndarray, name: str) -> np.ndarray:
    mat = check_finite_array(mat, name)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} must be a square matrix")
    return mat
