"""Covariance kernels: the RBF family and fixed grid matrices.

The RBF stores its denominator directly, ``k(t1, t2) = a * exp(-(t1-t2)^2 /
s_den)``, so published covariances like ``0.2 exp(-d^2/16)`` map onto
parameters verbatim.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .linalg import robust_cholesky_batch
from .validation import check_positive_scalar, check_square_matrix

__all__ = [
    "RbfParams",
    "RbfKernel",
    "FixedKernel",
    "rbf",
    "kernel_grad",
    "q2_value_and_grad",
    "optimize_kernel_params",
    "empirical_kernel_update",
]


@dataclass(frozen=True)
class RbfParams:
    """RBF hyperparameters: ``amplitude * exp(-(t1-t2)^2 / s_den)``."""

    amplitude: float
    s_den: float

    def __post_init__(self) -> None:
        check_positive_scalar(self.amplitude, "amplitude")
        check_positive_scalar(self.s_den, "s_den")


def rbf(params: RbfParams, t1, t2) -> np.ndarray | float:
    """Evaluate the kernel elementwise on broadcastable time arrays."""
    d = np.asarray(t1, dtype=float) - np.asarray(t2, dtype=float)
    out = params.amplitude * np.exp(-(d * d) / params.s_den)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class RbfKernel:
    """Parametric kernel usable at arbitrary time points."""

    params: RbfParams

    def matrix(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return rbf(self.params, points[:, None], points[None, :])

    def cross(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return rbf(self.params, a[:, None], b[None, :])

    def diag(self, points: np.ndarray) -> np.ndarray:
        return np.full(np.asarray(points).shape, self.params.amplitude)


@dataclass(frozen=True)
class FixedKernel:
    """Nonparametric kernel: an explicit PSD matrix over a fixed grid.

    Entries are addressed by grid index, so it is only usable for points
    lying on the grid it was estimated on.
    """

    matrix_full: np.ndarray

    def __post_init__(self) -> None:
        mat = check_square_matrix(self.matrix_full, "kernel matrix")
        if not np.allclose(mat, mat.T, atol=1e-10):
            raise ValueError("kernel matrix must be symmetric")
        object.__setattr__(self, "matrix_full", np.asarray(mat, dtype=float))

    def submatrix(self, idx: np.ndarray) -> np.ndarray:
        return self.matrix_full[np.ix_(idx, idx)]

    def cross_idx(self, idx_a: np.ndarray, idx_b: np.ndarray) -> np.ndarray:
        return self.matrix_full[np.ix_(idx_a, idx_b)]

    def diag_idx(self, idx: np.ndarray) -> np.ndarray:
        return np.diag(self.matrix_full)[idx]


def kernel_grad(params: RbfParams, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Analytic partials of the kernel matrix w.r.t. amplitude and s_den."""
    points = np.asarray(points, dtype=float)
    d2 = (points[:, None] - points[None, :]) ** 2
    e = np.exp(-d2 / params.s_den)
    d_amp = e
    d_sden = params.amplitude * e * d2 / params.s_den**2
    return d_amp, d_sden


def _blocks_by_size(task_points: list[np.ndarray]) -> dict[int, list[int]]:
    blocks: dict[int, list[int]] = {}
    for j, pts in enumerate(task_points):
        blocks.setdefault(len(pts), []).append(j)
    return blocks


def q2_value_and_grad(
    params: RbfParams,
    task_points: list[np.ndarray],
    weight_mats: list[np.ndarray],
) -> tuple[float, np.ndarray]:
    """Kernel-learning objective and its log-space gradient.

    The objective is ``-1/2 sum_j [logdet K_j + tr(K_j^-1 W_j)]`` where
    ``K_j`` is the kernel at task ``j``'s points and ``W_j`` the
    responsibility-weighted second moment of its latent effect.  The
    gradient is taken w.r.t. ``(log amplitude, log s_den)``.
    """
    value, grad, _ = _q2_impl(params, task_points, weight_mats)
    return value, grad


def _q2_impl(
    params: RbfParams,
    task_points: list[np.ndarray],
    weight_mats: list[np.ndarray],
) -> tuple[float, np.ndarray, float]:
    """Objective, gradient, and the largest jitter its factorizations needed.

    Nonzero jitter means the kernel matrix was effectively singular and the
    reported value belongs to a regularized surrogate, not the objective.
    """
    value = 0.0
    grad = np.zeros(2)
    jitter = 0.0
    for size, idx in _blocks_by_size(task_points).items():
        pts = np.stack([task_points[j] for j in idx])          # (B, n)
        w = np.stack([weight_mats[j] for j in idx])            # (B, n, n)
        d2 = (pts[:, :, None] - pts[:, None, :]) ** 2
        k = params.amplitude * np.exp(-d2 / params.s_den)
        chol, jit = robust_cholesky_batch(k)
        jitter = max(jitter, jit)
        cholt = np.swapaxes(chol, 1, 2)
        logdet = 2.0 * np.sum(np.log(np.einsum("bii->bi", chol)))
        kinv_w = np.linalg.solve(cholt, np.linalg.solve(chol, w))
        value += -0.5 * (logdet + np.sum(np.einsum("bii->b", kinv_w)))
        # d/d(log a) K = K, d/d(log s_den) K = K * d2 / s_den
        for m, dk in enumerate((k, k * d2 / params.s_den)):
            kinv_dk = np.linalg.solve(cholt, np.linalg.solve(chol, dk))
            tr1 = np.sum(np.einsum("bii->b", kinv_dk))
            tr2 = np.sum(kinv_dk * np.swapaxes(kinv_w, 1, 2))
            grad[m] += -0.5 * (tr1 - tr2)
    return float(value), grad, float(jitter)


_LOG_BOUND = np.log(1e10)


def optimize_kernel_params(
    task_points: list[np.ndarray],
    weight_mats: list[np.ndarray],
    init: RbfParams,
    max_iter: int = 100,
) -> RbfParams:
    """Maximize the kernel-learning objective from ``init``.

    Runs L-BFGS-B in log-parameter space with at most ``max_iter``
    iterations.  Never returns parameters worse than ``init``: a result
    that does not improve on ``init``, or whose kernel matrix needed
    jitter to factor (so its measured value belongs to a regularized
    surrogate rather than the objective), is discarded.  An ``init`` that
    is already stationary (gradient norm below 1e-8) is returned
    unchanged.
    """
    if len(task_points) != len(weight_mats):
        raise ValueError("task_points and weight_mats lengths differ")
    v0, g0, _ = _q2_impl(init, task_points, weight_mats)
    if not np.isfinite(v0):
        raise ValueError("kernel objective not finite at the initial parameters")
    if np.linalg.norm(g0) < 1e-8:
        return init

    def neg(x: np.ndarray) -> tuple[float, np.ndarray]:
        p = RbfParams(amplitude=float(np.exp(x[0])), s_den=float(np.exp(x[1])))
        v, g = q2_value_and_grad(p, task_points, weight_mats)
        return -v, -g

    x0 = np.log([init.amplitude, init.s_den])
    res = minimize(
        neg,
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=[(-_LOG_BOUND, _LOG_BOUND)] * 2,
        options={"maxiter": max_iter},
    )
    fitted = RbfParams(amplitude=float(np.exp(res.x[0])), s_den=float(np.exp(res.x[1])))
    v1, _, jitter = _q2_impl(fitted, task_points, weight_mats)
    if not np.isfinite(v1) or v1 < v0 or jitter > 0.0:
        return init
    return fitted


def empirical_kernel_update(
    resp: np.ndarray,
    post_means: list[np.ndarray],
    post_covs: list[np.ndarray],
) -> np.ndarray:
    """Closed-form kernel matrix update for synchronously sampled tasks.

    ``K* = (1/M) sum_j sum_s resp[j, s] (C_j + mu_js mu_js^T)`` with
    ``post_means[j]`` holding the per-cluster posterior means (k, n) and
    ``post_covs[j]`` the shared posterior covariance of task ``j``.  All
    tasks must cover the full grid (identity selectors); the result is
    symmetrized before returning.
    """
    resp = np.asarray(resp, dtype=float)
    m = resp.shape[0]
    if m == 0:
        raise ValueError("no tasks")
    n = post_covs[0].shape[0]
    for j in range(m):
        if post_covs[j].shape != (n, n) or post_means[j].shape[1] != n:
            raise ValueError(
                "empirical kernel update requires synchronous tasks on the full grid"
            )
    out = np.zeros((n, n))
    for j in range(m):
        out += post_covs[j] * resp[j].sum()
        out += np.einsum("s,si,sl->il", resp[j], post_means[j], post_means[j])
    out /= m
    return 0.5 * (out + out.T)
