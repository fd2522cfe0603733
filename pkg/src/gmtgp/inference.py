"""Consumer-facing procedures on fitted mixtures.

Per-task regression prediction, generative classification across
per-label models, class discovery on unlabeled pools, BIC model-order
selection, and the reference baselines (single-task GP, degenerate
phase-aligned mixture, sliding-window phasing).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .data import Dataset, TaskSeries
from .dp import DpConfig, fit_dp
from .em import EStepState, FitConfig, GmtModel, e_step, fit
from .gp import predictive
from .kernels import FixedKernel, RbfKernel, RbfParams
from .linalg import robust_cholesky

logger = logging.getLogger(__name__)

__all__ = [
    "ClassifierBundle",
    "SingleTaskGp",
    "map_cluster",
    "predict_task",
    "fit_classifier",
    "classify",
    "classify_dataset",
    "class_discovery",
    "bic",
    "bic_select",
    "fit_single_task",
    "phased_gmm_fit",
    "universal_phasing",
]

_LOG_2PI = float(np.log(2.0 * np.pi))
_GRID_MATCH_TOL = 1e-9


def map_cluster(resp: np.ndarray) -> np.ndarray:
    """MAP cluster per task; ties go to the lowest index."""
    return np.argmax(np.asarray(resp, dtype=float), axis=1)


def _grid_indices(points: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Match unit-circle times to grid indices exactly (tolerance 1e-9)."""
    pos = np.asarray(times, dtype=float)
    n = points.size
    i = np.searchsorted(points, pos)
    left = (i - 1) % n
    right = i % n
    dl = np.abs(pos - points[left])
    dl = np.minimum(dl, 1.0 - dl)
    dr = np.abs(pos - points[right])
    dr = np.minimum(dr, 1.0 - dr)
    idx = np.where(dl < dr, left, right)
    if float(np.minimum(dl, dr).max(initial=0.0)) > _GRID_MATCH_TOL:
        raise ValueError("query time off the model grid with a fixed-matrix kernel")
    return idx.astype(np.intp)


def _group_curve_at(model: GmtModel, s: int, shift: float, times: np.ndarray) -> np.ndarray:
    """Shifted group curve of cluster ``s`` at unit-circle times."""
    group = model.groups[s]
    pos = np.mod(np.asarray(times, dtype=float) - shift, 1.0)
    if model.group_kernel is not None:
        return model.group_kernel.cross(pos, model.grid_points) @ group.coef
    return group.values[_grid_indices(model.grid_points, pos)]


def _indiv_train_matrix(model: GmtModel, dataset: Dataset, j: int) -> np.ndarray:
    if isinstance(model.indiv_kernel, FixedKernel):
        return model.indiv_kernel.submatrix(dataset.grid.selectors[j])
    return model.indiv_kernel.matrix(dataset.tasks[j].times)


def predict_task(
    model: GmtModel,
    dataset: Dataset,
    task: int | str,
    query_times: np.ndarray,
    estep: EStepState | None = None,
) -> np.ndarray:
    """Regression curve of one training task at new times (original units).

    The task's MAP cluster fixes the shifted group curve; the individual
    effect contributes its GP posterior mean given the task's residuals.
    A fixed-matrix individual kernel restricts queries to the grid.
    """
    j = dataset.task_index(task) if isinstance(task, str) else int(task)
    if estep is None:
        estep = e_step(model, dataset)
    z = int(np.argmax(estep.resp[j]))
    shift = float(model.shifts[j, z])
    internal = np.asarray(query_times, dtype=float) / model.period

    series = dataset.tasks[j]
    resid = series.values - _group_curve_at(model, z, shift, series.times)
    ktrain = _indiv_train_matrix(model, dataset, j)
    if isinstance(model.indiv_kernel, FixedKernel):
        qidx = _grid_indices(model.grid_points, np.mod(internal, 1.0))
        kcross = model.indiv_kernel.cross_idx(dataset.grid.selectors[j], qidx)
        kdiag = model.indiv_kernel.diag_idx(qidx)
    else:
        kcross = model.indiv_kernel.cross(series.times, internal)
        kdiag = model.indiv_kernel.diag(internal)
    indiv_mean, _ = predictive(ktrain, model.noise_var, resid, kcross, kdiag)
    return _group_curve_at(model, z, shift, np.mod(internal, 1.0)) + indiv_mean


# ---------------------------------------------------------------------------
# classification


@dataclass
class ClassifierBundle:
    """One fitted mixture per label plus label priors."""

    labels: list[str]
    models: list[GmtModel]
    priors: np.ndarray

    def __post_init__(self) -> None:
        self.priors = np.asarray(self.priors, dtype=float)
        if len(self.labels) != len(self.models) or len(self.labels) != self.priors.size:
            raise ValueError("labels, models and priors must align")
        if abs(self.priors.sum() - 1.0) > 1e-8 or np.any(self.priors < 0.0):
            raise ValueError("priors must form a simplex")
        periods = {m.period for m in self.models}
        if len(periods) != 1:
            raise ValueError("all per-label models must share the period")

    @property
    def period(self) -> float:
        return self.models[0].period


def fit_classifier(dataset: Dataset, config: FitConfig) -> tuple[ClassifierBundle, dict]:
    """Fit one mixture per label on that label's tasks.

    Labels must be present on every task.  Priors are label frequencies.
    Returns the bundle and a per-label fit report map.
    """
    labels_per_task = dataset.labels()
    if any(lab is None for lab in labels_per_task):
        raise ValueError("every task needs a label to fit a classifier")
    labels = sorted(set(labels_per_task))
    models: list[GmtModel] = []
    reports: dict[str, dict] = {}
    counts = []
    for lab in labels:
        tasks = tuple(t for t in dataset.tasks if t.label == lab)
        counts.append(len(tasks))
        sub = Dataset(
            tasks=tasks, period=dataset.period, snap_resolution=dataset.snap_resolution
        )
        model, report = fit(sub, config)
        models.append(model)
        reports[lab] = report
    priors = np.asarray(counts, dtype=float)
    priors /= priors.sum()
    return ClassifierBundle(labels=labels, models=models, priors=priors), reports


def _marginal_score(model: GmtModel, times: np.ndarray, values: np.ndarray) -> float:
    """log sum_s alpha_s max_shift N(y; shifted group curve, K + noise)."""
    n = times.size
    if isinstance(model.indiv_kernel, FixedKernel):
        idx = _grid_indices(model.grid_points, times)
        kmat = model.indiv_kernel.submatrix(idx)
    else:
        kmat = model.indiv_kernel.matrix(times)
    chol, _ = robust_cholesky(kmat + model.noise_var * np.eye(n))
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    shift_values = model.shift_grid.values
    best = np.empty(model.n_clusters)
    for s in range(model.n_clusters):
        pos = np.mod(times[None, :] - shift_values[:, None], 1.0)
        if model.group_kernel is not None:
            cand = (
                model.group_kernel.cross(pos.ravel(), model.grid_points)
                @ model.groups[s].coef
            ).reshape(pos.shape)
        else:
            cand = model.groups[s].values[
                _grid_indices(model.grid_points, pos.ravel())
            ].reshape(pos.shape)
        resid = values[None, :] - cand                      # (L, n)
        z = solve_triangular(chol, resid.T, lower=True)     # (n, L)
        quad = np.einsum("nl,nl->l", z, z)
        best[s] = -0.5 * (n * _LOG_2PI + logdet + quad.min())
    with np.errstate(divide="ignore"):
        return float(logsumexp(np.log(model.mixture) + best))


def _classify_internal(
    bundle: ClassifierBundle, times: np.ndarray, values: np.ndarray
) -> tuple[str, dict[str, float]]:
    scores = {}
    with np.errstate(divide="ignore"):
        log_priors = np.log(bundle.priors)
    score_vec = np.empty(len(bundle.labels))
    for i, (lab, model) in enumerate(zip(bundle.labels, bundle.models)):
        score_vec[i] = _marginal_score(model, times, values) + log_priors[i]
        scores[lab] = float(score_vec[i])
    return bundle.labels[int(np.argmax(score_vec))], scores


def classify(
    bundle: ClassifierBundle, series: TaskSeries
) -> tuple[str, dict[str, float]]:
    """Most probable label of a new series (times in original units).

    Per label and cluster the best phase shift maximizes the marginal
    density; the label score is the mixture of those maxima plus the log
    prior.  Ties resolve in label order.
    """
    internal = series.times / bundle.period
    if internal[0] < 0.0 or internal[-1] >= 1.0:
        raise ValueError("series times must lie within one period")
    return _classify_internal(bundle, internal, series.values)


def classify_dataset(bundle: ClassifierBundle, dataset: Dataset) -> list[str]:
    """Labels for every task of a dataset already on the unit circle."""
    if abs(dataset.period - bundle.period) > 1e-12 * max(1.0, bundle.period):
        raise ValueError("dataset period differs from the classifier period")
    return [
        _classify_internal(bundle, t.times, t.values)[0] for t in dataset.tasks
    ]


# ---------------------------------------------------------------------------
# class discovery


def class_discovery(
    reference: Dataset, unlabeled: Dataset, config: FitConfig | DpConfig
) -> dict:
    """Cluster the union of both sets, then name clusters by majority label.

    ``reference`` must be fully labeled; ``unlabeled`` tasks receive the
    label of their MAP cluster (clusters holding no reference tasks map to
    ``"unknown"``).  When the unlabeled set carries ground-truth labels the
    returned dict includes the resulting accuracy.
    """
    if any(lab is None for lab in reference.labels()):
        raise ValueError("reference set must be fully labeled")
    tasks = [
        TaskSeries(f"ref:{t.task_id}", t.times, t.values, t.label)
        for t in reference.tasks
    ] + [
        TaskSeries(f"new:{t.task_id}", t.times, t.values, t.label)
        for t in unlabeled.tasks
    ]
    union = Dataset(
        tasks=tuple(tasks),
        period=reference.period,
        snap_resolution=reference.snap_resolution,
    )
    if isinstance(config, DpConfig):
        model, report = fit_dp(union, config)
        k = config.truncation
    else:
        model, report = fit(union, config)
        k = config.n_clusters
    resp = np.asarray(report["responsibilities"], dtype=float)
    assign = map_cluster(resp)
    n_ref = reference.n_tasks

    cluster_to_label: dict[int, str] = {}
    ref_labels = np.array(reference.labels(), dtype=object)
    for s in range(k):
        members = ref_labels[assign[:n_ref] == s]
        if members.size == 0:
            cluster_to_label[s] = "unknown"
            continue
        uniq, counts = np.unique(members.astype(str), return_counts=True)
        cluster_to_label[s] = str(uniq[np.argmax(counts)])

    predicted = [cluster_to_label[int(s)] for s in assign[n_ref:]]
    out = {
        "cluster_to_label": cluster_to_label,
        "labels": predicted,
        "report": report,
        "model": model,
    }
    truth = unlabeled.labels()
    if all(lab is not None for lab in truth) and truth:
        hits = sum(p == t for p, t in zip(predicted, truth))
        out["accuracy"] = hits / len(truth)
    return out


# ---------------------------------------------------------------------------
# model-order selection


def _kernel_param_count(model: GmtModel) -> int:
    if isinstance(model.indiv_kernel, FixedKernel):
        n = model.indiv_kernel.matrix_full.shape[0]
        return n * (n + 1) // 2
    return 2


def bic(model: GmtModel, dataset: Dataset, estep: EStepState | None = None) -> float:
    """Bayesian information criterion of a fitted mixture.

    Uses the observed-data log likelihood (prior penalty excluded) and
    counts mixture weights, group coefficients, per-task shifts, the noise
    variance, and kernel parameters against log total sample count.
    """
    if estep is None:
        estep = e_step(model, dataset)
    k = model.n_clusters
    p = (
        (k - 1)
        + k * model.grid_points.size
        + dataset.n_tasks
        + 1
        + _kernel_param_count(model)
    )
    return -2.0 * estep.loglik + p * float(np.log(dataset.n_observations))


def bic_select(
    dataset: Dataset,
    k_values: list[int],
    config: FitConfig,
    kernel_mode: str | None = None,
) -> tuple[int, dict, GmtModel]:
    """Fit every candidate cluster count and keep the BIC minimizer.

    Ties go to the smaller k.  Returns the winning k, a per-k table of BIC
    scores and final objectives, and the winning model.
    """
    if not k_values:
        raise ValueError("k_values must be nonempty")
    table: dict[int, dict] = {}
    best_k: int | None = None
    best_score = np.inf
    best_model: GmtModel | None = None
    for k in sorted(set(int(k) for k in k_values)):
        cfg = replace(
            config,
            n_clusters=k,
            kernel_mode=kernel_mode if kernel_mode is not None else config.kernel_mode,
        )
        model, report = fit(dataset, cfg)
        score = bic(model, dataset)
        table[k] = {
            "bic": float(score),
            "final_objective": report["final_objective"],
            "converged": report["converged"],
        }
        if score < best_score:
            best_score = score
            best_k = k
            best_model = model
    return int(best_k), table, best_model


# ---------------------------------------------------------------------------
# baselines


@dataclass
class SingleTaskGp:
    """Plain GP regressor on one task's own samples (no group, no shift)."""

    times: np.ndarray                  # unit-circle times
    values: np.ndarray
    kernel: RbfKernel
    noise_var: float
    period: float = 1.0

    def predict(self, query_times: np.ndarray) -> np.ndarray:
        internal = np.asarray(query_times, dtype=float) / self.period
        kmat = self.kernel.matrix(self.times)
        kcross = self.kernel.cross(self.times, internal)
        kdiag = self.kernel.diag(internal)
        mean, _ = predictive(kmat, self.noise_var, self.values, kcross, kdiag)
        return mean


def fit_single_task(
    series: TaskSeries,
    kernel_params: RbfParams,
    noise_var: float,
    period: float = 1.0,
) -> SingleTaskGp:
    """Single-task GP baseline; series times must be on the unit circle."""
    if noise_var < 0.0:
        raise ValueError("noise_var must be nonnegative")
    return SingleTaskGp(
        times=series.times,
        values=series.values,
        kernel=RbfKernel(kernel_params),
        noise_var=float(noise_var),
        period=period,
    )


def phased_gmm_fit(dataset: Dataset, config: FitConfig) -> tuple[GmtModel, dict]:
    """Degenerate mixture fit: flat group prior, one fixed covariance.

    Requires synchronous tasks on a uniform grid; shift search runs over
    the full sample grid.
    """
    cfg = replace(
        config, kernel_mode="phased-gmm", shift_grid_size=dataset.grid.size
    )
    return fit(dataset, cfg)


def universal_phasing(
    values: np.ndarray, window_fraction: float = 0.05
) -> tuple[np.ndarray, int]:
    """Rotate a uniform-grid series so its best window starts at index 0.

    The window length is ``round(window_fraction * n)`` (half-up, minimum
    1); "best" means maximum mean over all circular starts, ties to the
    smallest start.  Returns the rotated series and the start it came from.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("values must be a nonempty vector")
    n = v.size
    w = max(1, int(np.floor(window_fraction * n + 0.5)))
    ext = np.concatenate([v, v[: w - 1]]) if w > 1 else v
    csum = np.concatenate([[0.0], np.cumsum(ext)])
    sums = csum[w : w + n] - csum[:n]
    start = int(np.argmax(sums))
    return np.roll(v, -start), start
