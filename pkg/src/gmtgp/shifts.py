"""Phase shifts on the periodic domain and their search.

A shift acts by circular convolution with a Dirac delta: shifting a
function ``f`` by ``t`` yields ``x -> f((x - t) mod T)``.  On a uniform
grid that is a right rotation of the sampled values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import RbfKernel
from .validation import check_positive_scalar

__all__ = [
    "ShiftGrid",
    "circular_shift",
    "shifted_kernel_section",
    "best_shift_brute",
    "best_shift_fft",
]


@dataclass(frozen=True)
class ShiftGrid:
    """Equally spaced candidate shifts ``{0, T/L, ..., (L-1) T/L}``."""

    count: int
    period: float = 1.0

    def __post_init__(self) -> None:
        if int(self.count) < 1:
            raise ValueError("shift grid needs at least one value")
        object.__setattr__(self, "count", int(self.count))
        check_positive_scalar(self.period, "period")

    @property
    def values(self) -> np.ndarray:
        return np.arange(self.count) * (self.period / self.count)


def circular_shift(values: np.ndarray, steps: int) -> np.ndarray:
    """Right-rotate ``values`` so ``out[i] = values[(i - steps) mod n]``."""
    values = np.asarray(values)
    if values.ndim != 1:
        raise ValueError("values must be 1-D")
    return np.roll(values, steps)


def shifted_kernel_section(
    kernel: RbfKernel, grid_points: np.ndarray, shift: float, period: float = 1.0
) -> np.ndarray:
    """Kernel between the grid and the grid moved back by ``shift``.

    Entry (i, l) is ``k(x_i, (x_l - shift) mod period)``, so a group effect
    with representer coefficients ``c`` evaluates after shifting as
    ``section.T @ c``.  At shift 0 this is exactly the grid kernel matrix.
    """
    grid_points = np.asarray(grid_points, dtype=float)
    moved = np.mod(grid_points - shift, period)
    return kernel.cross(grid_points, moved)


def best_shift_brute(
    candidates: np.ndarray, target: np.ndarray, weights: np.ndarray | None = None
) -> int:
    """Index of the candidate row closest to ``target`` in (weighted) L2.

    ``candidates`` holds one prediction per shift, shape (L, n).  Ties
    resolve to the smallest index.
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    target = np.asarray(target, dtype=float)
    diff = candidates - target[None, :]
    if weights is not None:
        diff = diff * np.sqrt(np.asarray(weights, dtype=float))[None, :]
    costs = np.einsum("li,li->l", diff, diff)
    return int(np.argmin(costs))


def best_shift_fft(u: np.ndarray, v: np.ndarray) -> int:
    """Best rotation of ``u`` toward ``v`` via circular cross-correlation.

    Both vectors live on the same uniform grid of length n, and the shift
    grid is that grid, so the answer is the argmax of
    ``ifft(conj(fft(u)) * fft(v))``.  Round-off-level ties resolve to the
    smallest index, matching the brute-force tie rule.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError("u and v must be 1-D of equal length")
    n = u.size
    corr = np.fft.irfft(np.conj(np.fft.rfft(u)) * np.fft.rfft(v), n=n)
    top = corr.max()
    tol = 1e-9 * max(1.0, float(np.abs(corr).max()))
    return int(np.argmax(corr >= top - tol))
