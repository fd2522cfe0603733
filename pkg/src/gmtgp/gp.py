"""Gaussian-process primitives on explicit covariance matrices.

All three operations factor ``K + noise_var * I`` once with a single
Cholesky and work through triangular solves; no matrix inverse is ever
formed explicitly.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .linalg import NumericalError, robust_cholesky

__all__ = ["posterior_moments", "log_marginal", "predictive"]

_NEG_VAR_TOL = 1e-10
_LOG_2PI = float(np.log(2.0 * np.pi))


def _noisy_chol(kmat: np.ndarray, noise_var: float) -> np.ndarray:
    kmat = np.asarray(kmat, dtype=float)
    if noise_var < 0.0:
        raise ValueError("noise_var must be nonnegative")
    L, _ = robust_cholesky(kmat + noise_var * np.eye(kmat.shape[0]))
    return L


def _clamp_variance(var: np.ndarray, context: str) -> np.ndarray:
    var = np.atleast_1d(np.asarray(var, dtype=float))
    low = var.min() if var.size else 0.0
    if low < -_NEG_VAR_TOL:
        raise NumericalError(f"{context}: negative variance {low:.3e}")
    return np.maximum(var, 0.0)


def posterior_moments(
    kmat: np.ndarray, noise_var: float, residual: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and covariance of a latent effect observed with noise.

    For ``y = f + eps`` with ``f ~ N(0, K)`` and ``eps ~ N(0, noise_var I)``,
    given ``residual = y - prior_mean``:

    ``mean = K (K + noise_var I)^-1 residual``
    ``cov  = K - K (K + noise_var I)^-1 K``

    The covariance diagonal is clamped at zero; dips below ``-1e-10`` raise.
    """
    kmat = np.asarray(kmat, dtype=float)
    residual = np.asarray(residual, dtype=float)
    L = _noisy_chol(kmat, noise_var)
    a = solve_triangular(L, kmat, lower=True)           # L^-1 K
    b = solve_triangular(L, residual, lower=True)       # L^-1 r
    mean = a.T @ b
    cov = kmat - a.T @ a
    diag = _clamp_variance(np.diag(cov), "posterior_moments")
    cov = cov.copy()
    np.fill_diagonal(cov, diag)
    return mean, cov


def log_marginal(kmat: np.ndarray, noise_var: float, residual: np.ndarray) -> float:
    """Log density of ``residual`` under ``N(0, K + noise_var I)``."""
    residual = np.asarray(residual, dtype=float)
    n = residual.size
    L = _noisy_chol(kmat, noise_var)
    b = solve_triangular(L, residual, lower=True)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return -0.5 * (n * _LOG_2PI + logdet + float(b @ b))


def predictive(
    kmat: np.ndarray,
    noise_var: float,
    residual: np.ndarray,
    k_cross: np.ndarray,
    k_test_diag: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Predictive mean and variance at test points.

    ``k_cross`` has shape (n_train, n_test); ``k_test_diag`` is the prior
    variance at the test points.  Variances are clamped at zero with the
    same ``-1e-10`` tolerance as :func:`posterior_moments`.
    """
    residual = np.asarray(residual, dtype=float)
    k_cross = np.atleast_2d(np.asarray(k_cross, dtype=float))
    L = _noisy_chol(kmat, noise_var)
    b = solve_triangular(L, residual, lower=True)
    v = solve_triangular(L, k_cross, lower=True)        # L^-1 k*
    mean = v.T @ b
    var = _clamp_variance(
        np.asarray(k_test_diag, dtype=float) - np.sum(v * v, axis=0), "predictive"
    )
    return mean, var
