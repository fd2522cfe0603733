"""Cholesky helpers with the shared jitter policy.

Policy: factor the matrix as given; only if that fails, add ``1e-8 * mean
diagonal`` to the diagonal and retry, escalating by one decade up to three
times before giving up.
"""

from __future__ import annotations

import numpy as np

__all__ = ["NumericalError", "robust_cholesky", "robust_cholesky_batch"]


class NumericalError(RuntimeError):
    """A linear-algebra step failed beyond what jitter can repair."""


_JITTER_START = 1e-8
_JITTER_RETRIES = 3


def robust_cholesky(mat: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``mat`` with the jitter policy.

    Returns
    -------
    (L, jitter)
        ``L @ L.T == mat + jitter * I`` (jitter is 0.0 when none was needed).
    """
    mat = np.asarray(mat, dtype=float)
    try:
        return np.linalg.cholesky(mat), 0.0
    except np.linalg.LinAlgError:
        pass
    scale = float(np.mean(np.diag(mat)))
    if not np.isfinite(scale) or scale <= 0.0:
        scale = 1.0
    jitter = _JITTER_START * scale
    for _ in range(_JITTER_RETRIES + 1):
        try:
            L = np.linalg.cholesky(mat + jitter * np.eye(mat.shape[0]))
            return L, jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError(
        f"Cholesky failed for {mat.shape[0]}x{mat.shape[0]} matrix even with jitter"
    )


def robust_cholesky_batch(mats: np.ndarray) -> tuple[np.ndarray, float]:
    """Batched version of :func:`robust_cholesky` for a (B, n, n) stack.

    One shared jitter is applied to the whole batch when any member fails.
    """
    mats = np.asarray(mats, dtype=float)
    try:
        return np.linalg.cholesky(mats), 0.0
    except np.linalg.LinAlgError:
        pass
    scale = float(np.mean(np.einsum("bii->b", mats)) / mats.shape[-1])
    if not np.isfinite(scale) or scale <= 0.0:
        scale = 1.0
    eye = np.eye(mats.shape[-1])
    jitter = _JITTER_START * scale
    for _ in range(_JITTER_RETRIES + 1):
        try:
            return np.linalg.cholesky(mats + jitter * eye), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError("batched Cholesky failed even with jitter")
