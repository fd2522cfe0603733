"""EM fitting of the shift-aware grouped mixed-effect GP mixture.

Each task ``y^j`` is one group curve, circularly shifted by a per-task
phase, plus an individual GP draw and white noise.  The E-step computes
cluster responsibilities and the posterior of the individual effects; the
M-step updates the mixture, the group curves together with the per-task
shifts (a cyclic two-step descent), the noise, and the individual kernel.

Group curves are held in representer form on the distinct grid: ``f(x) =
sum_i c_i k0(grid_i, x)``, so evaluating after a shift only needs kernel
sections at moved grid points, and on a uniform grid reduces to value
rotations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .data import Dataset
from .kernels import (
    FixedKernel,
    RbfKernel,
    RbfParams,
    empirical_kernel_update,
    optimize_kernel_params,
)
from .linalg import NumericalError, robust_cholesky, robust_cholesky_batch
from .shifts import ShiftGrid, best_shift_fft

logger = logging.getLogger(__name__)

__all__ = [
    "GroupEffect",
    "GmtModel",
    "EStepState",
    "FitConfig",
    "MonotonicityError",
    "e_step",
    "update_mixture",
    "fit_group_effect",
    "update_noise",
    "penalized_objective",
    "fit",
]

_LOG_2PI = float(np.log(2.0 * np.pi))
_DEAD_CLUSTER = 1e-8


class MonotonicityError(NumericalError):
    """The audited EM objective decreased beyond numerical slack."""


@dataclass(frozen=True)
class GroupEffect:
    """One group curve.

    ``coef`` are representer coefficients against the group kernel on the
    grid and ``values`` caches the curve on the grid.  Under a flat prior
    (the degenerate mixture mode) the curve is stored by value and ``coef``
    equals ``values``.
    """

    coef: np.ndarray
    values: np.ndarray
    flat_prior: bool = False


@dataclass
class GmtModel:
    """Fitted mixture: group curves, shifts, mixture, noise, kernels."""

    grid_points: np.ndarray
    shift_grid: ShiftGrid
    groups: list[GroupEffect]
    shift_idx: np.ndarray                      # (M, k) indices into shift_grid
    mixture: np.ndarray                        # (k,)
    noise_var: float
    indiv_kernel: RbfKernel | FixedKernel
    group_kernel: RbfKernel | None             # None under a flat prior
    period: float = 1.0

    @property
    def n_clusters(self) -> int:
        return len(self.groups)

    @property
    def shifts(self) -> np.ndarray:
        """Per-(task, cluster) shift values on the internal unit period."""
        return self.shift_grid.values[self.shift_idx]


@dataclass(frozen=True)
class EStepState:
    """Per-task posterior quantities from one E-step."""

    resp: np.ndarray                           # (M, k)
    post_means: list[np.ndarray]               # per task: (k, n_j)
    post_covs: list[np.ndarray]                # per task: (n_j, n_j)
    per_task_loglik: np.ndarray                # (M,)
    log_dens: np.ndarray                       # (M, k), no prior term
    post_entropy: float = 0.0                  # sum_j H[q(f_j)], 0 if skipped

    @property
    def loglik(self) -> float:
        return float(self.per_task_loglik.sum())


@dataclass(frozen=True)
class FitConfig:
    """Fit settings.

    ``shift_grid_size`` of ``None`` falls back to the dataset's snapping
    resolution, or 1 (no shifts).  ``kernel_mode`` selects the individual
    kernel treatment: parametric ``"rbf"``, closed-form ``"empirical"``
    (synchronous data only), or ``"phased-gmm"`` (flat group prior with the
    individual effect absorbed into one fixed covariance).  ``fixed_resp``
    clamps responsibilities to known assignments.
    """

    n_clusters: int = 3
    restarts: int = 5
    tol: float = 1e-5
    max_iter: int = 200
    inner_max: int = 20
    noise_floor: float = 1e-8
    seed: int | None = None
    shift_grid_size: int | None = None
    kernel_mode: str = "rbf"
    group_kernel: RbfParams | None = None
    init_kernel: RbfParams | None = None
    fixed_resp: np.ndarray | None = None
    monotonic_slack: float = 1e-6

    def __post_init__(self) -> None:
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.max_iter < 1 or self.inner_max < 1:
            raise ValueError("max_iter and inner_max must be >= 1")
        if self.kernel_mode not in ("rbf", "empirical", "phased-gmm"):
            raise ValueError(f"unknown kernel_mode {self.kernel_mode!r}")


# ---------------------------------------------------------------------------
# precomputed per-dataset structures


class _Problem:
    """Dataset views and grid structure shared across EM iterations."""

    def __init__(
        self,
        dataset: Dataset,
        shift_count: int,
        group_kernel: RbfKernel | None,
        flat_prior: bool,
    ) -> None:
        self.dataset = dataset
        self.points = dataset.grid.points
        self.n_grid = self.points.size
        self.sel = [np.asarray(s, dtype=np.intp) for s in dataset.grid.selectors]
        self.times = [t.times for t in dataset.tasks]
        self.values = [t.values for t in dataset.tasks]
        self.sizes = np.array([t.n_samples for t in dataset.tasks], dtype=np.intp)
        self.n_tasks = dataset.n_tasks
        self.shift_grid = ShiftGrid(shift_count)
        self.flat_prior = flat_prior

        blocks: dict[int, list[int]] = {}
        for j, n in enumerate(self.sizes):
            blocks.setdefault(int(n), []).append(j)
        self.blocks = {n: np.array(idx, dtype=np.intp) for n, idx in sorted(blocks.items())}

        # Uniform circular grid with the shift grid landing on grid steps
        # lets every shifted evaluation become an index rotation.
        self.steps: np.ndarray | None = None
        n, L = self.n_grid, shift_count
        if n % L == 0 and n > 1:
            d = np.diff(self.points)
            spacing = 1.0 / n
            if np.allclose(d, spacing, rtol=0.0, atol=1e-9 * spacing) and abs(
                self.points[0] + 1.0 - self.points[-1] - spacing
            ) < 1e-9 * spacing:
                self.steps = np.arange(L, dtype=np.intp) * (n // L)
        if n == 1 and L == 1:
            self.steps = np.zeros(1, dtype=np.intp)
        self.synchronous = dataset.is_synchronous()

        self.group_kernel = group_kernel
        if group_kernel is not None:
            self.kmat_raw = group_kernel.matrix(self.points)
            chol, jitter = robust_cholesky(self.kmat_raw)
            self.kmat_reg = self.kmat_raw + jitter * np.eye(self.n_grid)
            self.kmat_chol = chol
        else:
            self.kmat_raw = None
            self.kmat_reg = None
            self.kmat_chol = None
        self._sections: dict[int, np.ndarray] = {}
        # cache kernel sections only while the footprint stays moderate
        self._cache_sections = L * n * n <= 8_000_000

    # -- shifted evaluation ------------------------------------------------

    def section(self, m: int) -> np.ndarray:
        """Kernel between the grid and the grid moved back by shift m."""
        cached = self._sections.get(m)
        if cached is not None:
            return cached
        shift = self.shift_grid.values[m]
        moved = np.mod(self.points - shift, 1.0)
        sec = self.group_kernel.cross(self.points, moved)
        if self._cache_sections:
            self._sections[m] = sec
        return sec

    def grid_values_at_shift(self, group: GroupEffect, m: int) -> np.ndarray:
        """Group curve on the grid after shifting by shift index ``m``."""
        if self.steps is not None:
            return np.roll(group.values, self.steps[m])
        return self.section(m).T @ group.coef

    def candidate_grid(self, group: GroupEffect) -> np.ndarray:
        """All-shift curve values on the grid, shape (L, n_grid)."""
        L = self.shift_grid.count
        if self.steps is not None:
            idx = (np.arange(self.n_grid)[None, :] - self.steps[:, None]) % self.n_grid
            return group.values[idx]
        return np.stack([self.section(m).T @ group.coef for m in range(L)])

    def unshift_idx(self, j: int, m: int) -> np.ndarray:
        """Grid indices of task j's samples moved back by shift index m."""
        return (self.sel[j] - self.steps[m]) % self.n_grid

    def means_for_cluster(self, group: GroupEffect, shift_col: np.ndarray) -> list[np.ndarray]:
        """Shifted group curve at each task's own sample points."""
        if self.steps is not None:
            return [
                group.values[self.unshift_idx(j, int(shift_col[j]))]
                for j in range(self.n_tasks)
            ]
        rows = {m: self.section(m).T @ group.coef for m in np.unique(shift_col)}
        return [rows[int(shift_col[j])][self.sel[j]] for j in range(self.n_tasks)]

    def indiv_matrices(self, kernel: RbfKernel | FixedKernel, block: np.ndarray, n: int) -> np.ndarray:
        """Individual-effect covariance at each block task's points, (B, n, n)."""
        if isinstance(kernel, FixedKernel):
            sel = np.stack([self.sel[j] for j in block])
            return kernel.matrix_full[sel[:, :, None], sel[:, None, :]]
        pts = np.stack([self.times[j] for j in block])
        d2 = (pts[:, :, None] - pts[:, None, :]) ** 2
        return kernel.params.amplitude * np.exp(-d2 / kernel.params.s_den)


# ---------------------------------------------------------------------------
# E-step


def _e_step_impl(
    problem: _Problem,
    model: GmtModel,
    log_prior: np.ndarray,
    fixed_resp: np.ndarray | None = None,
    compute_entropy: bool = False,
) -> EStepState:
    k = model.n_clusters
    M = problem.n_tasks
    cluster_means = [
        problem.means_for_cluster(model.groups[s], model.shift_idx[:, s])
        for s in range(k)
    ]
    log_dens = np.zeros((M, k))
    post_means: list[np.ndarray | None] = [None] * M
    post_covs: list[np.ndarray | None] = [None] * M
    entropy = 0.0
    s2 = model.noise_var

    for n, block in problem.blocks.items():
        kmats = problem.indiv_matrices(model.indiv_kernel, block, n)
        chol, _ = robust_cholesky_batch(kmats + s2 * np.eye(n))
        logdet = 2.0 * np.sum(np.log(np.einsum("bii->bi", chol)), axis=1)
        y = np.stack([problem.values[j] for j in block])
        resid = np.empty((block.size, n, k))
        for s in range(k):
            for b, j in enumerate(block):
                resid[b, :, s] = problem.values[j] - cluster_means[s][j]
        z = np.linalg.solve(chol, resid)                       # L^-1 r
        quad = np.einsum("bns,bns->bs", z, z)
        log_dens[block] = -0.5 * (n * _LOG_2PI + logdet[:, None] + quad)
        alpha = np.linalg.solve(np.swapaxes(chol, 1, 2), z)    # (K+s2 I)^-1 r
        mu = np.einsum("bnm,bms->bns", kmats, alpha)
        g = np.linalg.solve(np.swapaxes(chol, 1, 2), np.linalg.solve(chol, kmats))
        cov = kmats - np.einsum("bnm,bml->bnl", kmats, g)
        cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
        diag = np.einsum("bii->bi", cov)
        low = diag.min() if diag.size else 0.0
        if low < -1e-8 * max(1.0, float(np.abs(diag).max())):
            raise NumericalError(f"posterior covariance diagonal at {low:.3e}")
        np.clip(diag, 0.0, None, out=diag)
        for b, j in enumerate(block):
            post_means[j] = mu[b].T.copy()
            post_covs[j] = cov[b]
        if compute_entropy and s2 > 0.0:
            chol_k, _ = robust_cholesky_batch(kmats)
            logdet_k = 2.0 * np.sum(np.log(np.einsum("bii->bi", chol_k)), axis=1)
            logdet_c = n * np.log(s2) + logdet_k - logdet
            entropy += 0.5 * float(
                np.sum(n * (_LOG_2PI + 1.0) + logdet_c)
            )

    logw = log_prior[None, :] + log_dens
    per_task = logsumexp(logw, axis=1)
    resp = np.exp(logw - per_task[:, None])
    if fixed_resp is not None:
        resp = np.array(fixed_resp, dtype=float, copy=True)
    return EStepState(
        resp=resp,
        post_means=post_means,
        post_covs=post_covs,
        per_task_loglik=per_task,
        log_dens=log_dens,
        post_entropy=entropy,
    )


def _problem_for_model(model: GmtModel, dataset: Dataset) -> _Problem:
    problem = _Problem(
        dataset,
        model.shift_grid.count,
        model.group_kernel,
        flat_prior=model.groups[0].flat_prior if model.groups else False,
    )
    if not np.allclose(problem.points, model.grid_points):
        raise ValueError("dataset grid does not match the model's grid")
    return problem


def e_step(model: GmtModel, dataset: Dataset) -> EStepState:
    """Responsibilities and individual-effect posteriors for every task."""
    problem = _problem_for_model(model, dataset)
    with np.errstate(divide="ignore"):
        log_prior = np.log(model.mixture)
    return _e_step_impl(problem, model, log_prior)


# ---------------------------------------------------------------------------
# M-step pieces


def update_mixture(resp: np.ndarray) -> np.ndarray:
    """Mixture weights as mean responsibilities."""
    resp = np.asarray(resp, dtype=float)
    if resp.ndim != 2 or resp.shape[0] == 0:
        raise ValueError("responsibilities must be a nonempty (M, k) matrix")
    return resp.mean(axis=0)


def _shift_step(
    problem: _Problem, group: GroupEffect, targets: list[np.ndarray]
) -> np.ndarray:
    """Best shift index per task against the current group curve."""
    L = problem.shift_grid.count
    if L == 1:
        return np.zeros(problem.n_tasks, dtype=np.intp)
    out = np.empty(problem.n_tasks, dtype=np.intp)
    if problem.flat_prior:
        # degenerate mode: synchronous uniform data, shift grid == grid
        for j in range(problem.n_tasks):
            out[j] = best_shift_fft(group.values, targets[j])
        return out
    cand_grid = problem.candidate_grid(group)
    for n, block in problem.blocks.items():
        sel = np.stack([problem.sel[j] for j in block])
        tgt = np.stack([targets[j] for j in block])
        cand = cand_grid[:, sel]                              # (L, B, n)
        diff = cand - tgt[None, :, :]
        costs = np.einsum("lbn,lbn->bl", diff, diff)
        out[block] = np.argmin(costs, axis=1)
    return out


def _coef_step(
    problem: _Problem,
    targets: list[np.ndarray],
    weights: np.ndarray,
    shift_col: np.ndarray,
    noise_var: float,
) -> GroupEffect:
    """Solve the penalized weighted least squares for the group curve."""
    ng = problem.n_grid
    active = np.flatnonzero(weights > 0.0)
    if problem.flat_prior:
        wsum = np.zeros(ng)
        wval = np.zeros(ng)
        for j in active:
            gidx = problem.unshift_idx(j, int(shift_col[j]))
            np.add.at(wsum, gidx, weights[j])
            np.add.at(wval, gidx, weights[j] * targets[j])
        vals = np.divide(wval, wsum, out=np.zeros(ng), where=wsum > 0.0)
        return GroupEffect(coef=vals, values=vals, flat_prior=True)

    if problem.steps is not None:
        wsum = np.zeros(ng)
        wval = np.zeros(ng)
        for j in active:
            gidx = problem.unshift_idx(j, int(shift_col[j]))
            np.add.at(wsum, gidx, weights[j])
            np.add.at(wval, gidx, weights[j] * targets[j])
        kmat = problem.kmat_raw
        a = (kmat * wsum[None, :]) @ kmat
        b = kmat @ wval
    else:
        a = np.zeros((ng, ng))
        b = np.zeros(ng)
        for m in np.unique(shift_col[active]):
            sec = problem.section(int(m))
            wsum = np.zeros(ng)
            wval = np.zeros(ng)
            for j in active[shift_col[active] == m]:
                np.add.at(wsum, problem.sel[j], weights[j])
                np.add.at(wval, problem.sel[j], weights[j] * targets[j])
            a += (sec * wsum[None, :]) @ sec.T
            b += sec @ wval
    system = a + noise_var * problem.kmat_reg
    chol, _ = robust_cholesky(system)
    coef = solve_triangular(
        chol.T, solve_triangular(chol, b, lower=True), lower=False
    )
    return GroupEffect(coef=coef, values=problem.kmat_raw @ coef, flat_prior=False)


def _inner_objective(
    problem: _Problem,
    group: GroupEffect,
    targets: list[np.ndarray],
    weights: np.ndarray,
    shift_col: np.ndarray,
    noise_var: float,
) -> float:
    data = 0.0
    means = problem.means_for_cluster(group, shift_col)
    for j in np.flatnonzero(weights > 0.0):
        r = targets[j] - means[j]
        data += weights[j] * float(r @ r)
    if problem.flat_prior:
        return data
    penalty = 0.5 * float(group.coef @ (problem.kmat_reg @ group.coef))
    return data / (2.0 * noise_var) + penalty


def _cyclic_group_fit(
    problem: _Problem,
    targets: list[np.ndarray],
    weights: np.ndarray,
    shift_col: np.ndarray,
    group: GroupEffect,
    noise_var: float,
    inner_max: int,
    tol: float,
) -> tuple[GroupEffect, np.ndarray, list[float]]:
    """Alternate shift and curve updates; the objective never increases."""
    if not np.any(weights > 0.0):
        zero = np.zeros(problem.n_grid)
        return GroupEffect(zero, zero, flat_prior=problem.flat_prior), shift_col, []
    obj = _inner_objective(problem, group, targets, weights, shift_col, noise_var)
    trace = [obj]
    for _ in range(inner_max):
        shift_col = _shift_step(problem, group, targets)
        group = _coef_step(problem, targets, weights, shift_col, noise_var)
        new = _inner_objective(problem, group, targets, weights, shift_col, noise_var)
        if new > obj + 1e-8 * (1.0 + abs(obj)):
            raise MonotonicityError(
                f"inner cyclic objective increased: {obj:.12g} -> {new:.12g}"
            )
        trace.append(new)
        if obj - new < tol:
            break
        obj = new
    return group, shift_col, trace


def fit_group_effect(
    dataset: Dataset,
    targets: list[np.ndarray],
    weights: np.ndarray,
    shift_col: np.ndarray,
    noise_var: float,
    group_kernel: RbfKernel,
    shift_grid: ShiftGrid,
    init: GroupEffect | None = None,
    inner_max: int = 20,
    tol: float = 1e-5,
) -> tuple[GroupEffect, np.ndarray, list[float]]:
    """Fit one cluster's group curve and per-task shifts.

    ``targets`` are the residual series (task values minus the cluster's
    posterior individual means), ``weights`` the cluster's responsibility
    column.  Returns the fitted curve, the shift indices, and the inner
    objective trace (non-increasing).
    """
    problem = _Problem(dataset, shift_grid.count, group_kernel, flat_prior=False)
    if init is None:
        zero = np.zeros(problem.n_grid)
        init = GroupEffect(zero, zero, flat_prior=False)
    shift_col = np.array(shift_col, dtype=np.intp, copy=True)
    weights = np.asarray(weights, dtype=float)
    return _cyclic_group_fit(
        problem, targets, weights, shift_col, init, noise_var, inner_max, tol
    )


def _new_cluster_means(problem: _Problem, model: GmtModel) -> list[list[np.ndarray]]:
    return [
        problem.means_for_cluster(model.groups[s], model.shift_idx[:, s])
        for s in range(model.n_clusters)
    ]


def _noise_from(
    problem: _Problem,
    resp: np.ndarray,
    estep: EStepState,
    means: list[list[np.ndarray]],
    noise_floor: float,
) -> float:
    total = 0.0
    for j in range(problem.n_tasks):
        total += float(np.trace(estep.post_covs[j]))
        y = problem.values[j]
        for s in range(resp.shape[1]):
            r = y - means[s][j] - estep.post_means[j][s]
            total += resp[j, s] * float(r @ r)
    return max(total / float(problem.sizes.sum()), noise_floor)


def update_noise(
    model: GmtModel, dataset: Dataset, estep: EStepState, noise_floor: float = 1e-8
) -> float:
    """Noise variance maximizer given updated group curves and shifts."""
    problem = _problem_for_model(model, dataset)
    means = _new_cluster_means(problem, model)
    return _noise_from(problem, estep.resp, estep, means, noise_floor)


def _model_penalty(problem: _Problem, model: GmtModel) -> float:
    if problem.flat_prior:
        return 0.0
    return 0.5 * float(
        sum(g.coef @ (problem.kmat_reg @ g.coef) for g in model.groups)
    )


def penalized_objective(model: GmtModel, dataset: Dataset) -> float:
    """Observed-data log likelihood minus the group-curve prior penalty."""
    problem = _problem_for_model(model, dataset)
    with np.errstate(divide="ignore"):
        log_prior = np.log(model.mixture)
    state = _e_step_impl(problem, model, log_prior)
    return state.loglik - _model_penalty(problem, model)


# ---------------------------------------------------------------------------
# initialization


def _interp_on(grid: np.ndarray, times: np.ndarray, values: np.ndarray) -> np.ndarray:
    return np.interp(grid, times, values, period=1.0)


def _alignment_scan(
    series: np.ndarray, center: np.ndarray, n_shifts: int
) -> tuple[np.ndarray, np.ndarray]:
    """Cost and aligning shift index of every row of ``series`` vs ``center``."""
    if n_shifts == 1:
        diff = series - center[None, :]
        return np.einsum("mi,mi->m", diff, diff), np.zeros(series.shape[0], dtype=np.intp)
    corr = np.fft.irfft(
        np.conj(np.fft.rfft(center))[None, :] * np.fft.rfft(series, axis=1),
        n=n_shifts,
        axis=1,
    )
    top = corr.max(axis=1)
    tol = 1e-9 * np.maximum(1.0, np.abs(corr).max(axis=1))
    align = np.argmax(corr >= (top - tol)[:, None], axis=1)
    norms = np.einsum("mi,mi->m", series, series) + float(center @ center)
    return norms - 2.0 * corr[np.arange(series.shape[0]), align], align.astype(np.intp)


def _initialize(
    problem: _Problem,
    k: int,
    rng: np.random.Generator,
    config: FitConfig,
) -> GmtModel:
    M = problem.n_tasks
    L = problem.shift_grid.count
    g = L if L > 1 else min(64, max(8, problem.n_grid))
    init_grid = np.arange(g) / g
    series = np.stack(
        [_interp_on(init_grid, problem.times[j], problem.values[j]) for j in range(M)]
    )

    # k-means++-style seeding with a shift-invariant distance
    first = int(rng.integers(M))
    centers = [first]
    cost, align = _alignment_scan(series, series[first], g if L > 1 else 1)
    owner = np.zeros(M, dtype=np.intp)
    for s in range(1, min(k, M) if k > 1 else 1):
        weights = np.clip(cost, 0.0, None)
        total = weights.sum()
        if total > 0.0:
            probs = weights / total
            nxt = int(rng.choice(M, p=probs))
        else:
            nxt = int(rng.integers(M))
        centers.append(nxt)
        c_cost, c_align = _alignment_scan(series, series[nxt], g if L > 1 else 1)
        better = c_cost < cost
        cost = np.where(better, c_cost, cost)
        align = np.where(better, c_align, align)
        owner = np.where(better, s, owner)

    shift_idx = rng.integers(0, L, size=(M, k)).astype(np.intp)
    if L > 1:
        shift_idx[np.arange(M), owner] = align
    resp0 = np.zeros((M, k))
    resp0[np.arange(M), owner] = 1.0
    counts = resp0.sum(axis=0)
    mixture = (counts + 0.1) / (M + 0.1 * k)

    groups: list[GroupEffect] = []
    for s in range(k):
        if s < len(centers):
            j = centers[s]
            vals = _interp_on(problem.points, problem.times[j], problem.values[j])
        else:
            vals = np.zeros(problem.n_grid)
        if problem.flat_prior:
            groups.append(GroupEffect(coef=vals, values=vals, flat_prior=True))
        else:
            coef = solve_triangular(
                problem.kmat_chol.T,
                solve_triangular(problem.kmat_chol, vals, lower=True),
                lower=False,
            )
            groups.append(
                GroupEffect(coef=coef, values=problem.kmat_raw @ coef, flat_prior=False)
            )

    pooled = float(np.var(np.concatenate(problem.values)))
    if config.kernel_mode == "rbf":
        kernel: RbfKernel | FixedKernel = RbfKernel(
            config.init_kernel or RbfParams(amplitude=1.0, s_den=0.04)
        )
        noise = max(0.1 * pooled, config.noise_floor)
    else:
        data = np.stack([problem.values[j] for j in range(M)])
        cov = np.cov(data, rowvar=False, bias=True)
        cov = np.atleast_2d(cov) + 1e-6 * max(float(np.mean(np.diag(np.atleast_2d(cov)))), 1e-12) * np.eye(problem.n_grid)
        kernel = FixedKernel(cov)
        noise = 0.0 if config.kernel_mode == "phased-gmm" else max(
            0.1 * pooled, config.noise_floor
        )

    return GmtModel(
        grid_points=problem.points,
        shift_grid=problem.shift_grid,
        groups=groups,
        shift_idx=shift_idx,
        mixture=mixture,
        noise_var=noise,
        indiv_kernel=kernel,
        group_kernel=problem.group_kernel,
        period=problem.dataset.period,
    )


# ---------------------------------------------------------------------------
# M-step and driver


def _m_step(
    problem: _Problem,
    model: GmtModel,
    resp: np.ndarray,
    estep: EStepState,
    config: FitConfig,
    update_mix: bool = True,
) -> GmtModel:
    k = model.n_clusters
    mixture = update_mixture(resp) if update_mix else model.mixture
    groups: list[GroupEffect] = []
    shift_idx = model.shift_idx.copy()
    for s in range(k):
        if problem.flat_prior:
            targets = [problem.values[j] for j in range(problem.n_tasks)]
        else:
            targets = [
                problem.values[j] - estep.post_means[j][s]
                for j in range(problem.n_tasks)
            ]
        group, col, _ = _cyclic_group_fit(
            problem,
            targets,
            resp[:, s],
            shift_idx[:, s].copy(),
            model.groups[s],
            model.noise_var,
            config.inner_max,
            config.tol,
        )
        groups.append(group)
        shift_idx[:, s] = col

    new_model = GmtModel(
        grid_points=model.grid_points,
        shift_grid=model.shift_grid,
        groups=groups,
        shift_idx=shift_idx,
        mixture=mixture,
        noise_var=model.noise_var,
        indiv_kernel=model.indiv_kernel,
        group_kernel=model.group_kernel,
        period=model.period,
    )
    means = _new_cluster_means(problem, new_model)

    if not problem.flat_prior:
        new_model.noise_var = _noise_from(
            problem, resp, estep, means, config.noise_floor
        )

    if config.kernel_mode == "rbf":
        weight_mats = []
        for j in range(problem.n_tasks):
            w = estep.post_covs[j] + np.einsum(
                "s,si,sl->il", resp[j], estep.post_means[j], estep.post_means[j]
            )
            weight_mats.append(w)
        new_model.indiv_kernel = RbfKernel(
            optimize_kernel_params(
                problem.times, weight_mats, new_model.indiv_kernel.params
            )
        )
    elif config.kernel_mode == "empirical":
        new_model.indiv_kernel = FixedKernel(
            empirical_kernel_update(resp, estep.post_means, estep.post_covs)
        )
    else:  # phased-gmm: shared covariance from residuals against new curves
        resid_means = [
            np.stack([problem.values[j] - means[s][j] for s in range(k)])
            for j in range(problem.n_tasks)
        ]
        zero_cov = [np.zeros((n, n)) for n in problem.sizes]
        new_model.indiv_kernel = FixedKernel(
            empirical_kernel_update(resp, resid_means, zero_cov)
        )
    return new_model


@dataclass
class _RunResult:
    model: GmtModel
    estep: EStepState
    trace: list[float]
    converged: bool
    n_iterations: int
    reseeds: int = 0


def _single_run(
    problem: _Problem, config: FitConfig, rng: np.random.Generator
) -> _RunResult:
    model = _initialize(problem, config.n_clusters, rng, config)
    audit = config.fixed_resp is None and not problem.flat_prior
    prev_pen: float | None = None
    trace: list[float] = []
    converged = False
    reseeds = 0
    estep: EStepState | None = None
    it = 0
    for it in range(config.max_iter):
        with np.errstate(divide="ignore"):
            log_prior = np.log(model.mixture)
        estep = _e_step_impl(problem, model, log_prior, fixed_resp=config.fixed_resp)
        pen = estep.loglik - _model_penalty(problem, model)
        trace.append(float(pen))
        if prev_pen is not None:
            if pen < prev_pen - config.monotonic_slack:
                if audit:
                    raise MonotonicityError(
                        f"penalized objective fell {prev_pen:.10g} -> {pen:.10g} "
                        f"at iteration {it}"
                    )
                logger.warning(
                    "objective decreased %.6g -> %.6g (audit relaxed)", prev_pen, pen
                )
            if abs(pen - prev_pen) < config.tol:
                converged = True
                break
        prev_pen = pen

        resp = estep.resp
        dead = np.flatnonzero(resp.sum(axis=0) < _DEAD_CLUSTER)
        if dead.size and config.fixed_resp is None:
            resp = resp.copy()
            order = np.argsort(estep.per_task_loglik)
            for rank, s in enumerate(dead):
                j = order[rank % problem.n_tasks]
                resp[j] = 0.0
                resp[j, s] = 1.0
            reseeds += 1
            prev_pen = None  # heuristic jump; restart the audit baseline
        model = _m_step(problem, model, resp, estep, config)
    if not converged and estep is not None:
        with np.errstate(divide="ignore"):
            log_prior = np.log(model.mixture)
        estep = _e_step_impl(problem, model, log_prior, fixed_resp=config.fixed_resp)
        trace.append(float(estep.loglik - _model_penalty(problem, model)))
    return _RunResult(
        model=model,
        estep=estep,
        trace=trace,
        converged=converged,
        n_iterations=it + 1,
        reseeds=reseeds,
    )


def _resolve_shift_count(dataset: Dataset, config: FitConfig) -> int:
    if config.shift_grid_size is not None:
        return int(config.shift_grid_size)
    if dataset.snap_resolution is not None:
        return int(dataset.snap_resolution)
    return 1


def fit(dataset: Dataset, config: FitConfig) -> tuple[GmtModel, dict]:
    """Fit the mixture with seeded restarts; best penalized objective wins.

    Returns the winning model and a report holding, per restart, the
    per-iteration penalized-objective trace, convergence flag, and
    iteration count.  The report also carries the winning restart's final
    E-step responsibilities.
    """
    L = _resolve_shift_count(dataset, config)
    flat = config.kernel_mode == "phased-gmm"
    if flat:
        group_kernel = None
    else:
        params = config.group_kernel or RbfParams(amplitude=1.0, s_den=0.04)
        group_kernel = RbfKernel(params)
    problem = _Problem(dataset, L, group_kernel, flat_prior=flat)
    if config.kernel_mode in ("empirical", "phased-gmm") and not problem.synchronous:
        raise ValueError(f"kernel_mode {config.kernel_mode!r} needs synchronous tasks")
    if flat:
        if problem.steps is None or L != problem.n_grid:
            raise ValueError(
                "phased-gmm mode needs a uniform grid with shift grid == sample grid"
            )
    if config.fixed_resp is not None:
        fr = np.asarray(config.fixed_resp, dtype=float)
        if fr.shape != (dataset.n_tasks, config.n_clusters):
            raise ValueError("fixed_resp must have shape (n_tasks, n_clusters)")

    seeds = np.random.SeedSequence(config.seed).spawn(config.restarts)
    runs = [
        _single_run(problem, config, np.random.default_rng(seed)) for seed in seeds
    ]
    finals = np.array([run.trace[-1] for run in runs])
    best = int(np.argmax(finals))
    report = {
        "n_clusters": config.n_clusters,
        "shift_grid_size": L,
        "kernel_mode": config.kernel_mode,
        "restarts": [
            {
                "objective_trace": [float(v) for v in run.trace],
                "converged": bool(run.converged),
                "n_iterations": int(run.n_iterations),
                "reseeds": int(run.reseeds),
            }
            for run in runs
        ],
        "best_restart": best,
        "final_objective": float(finals[best]),
        "converged": bool(runs[best].converged),
        "responsibilities": [
            [float(v) for v in row] for row in runs[best].estep.resp
        ],
    }
    return runs[best].model, report
