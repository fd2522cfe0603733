"""Estimator-style wrappers: constructor params, fit(), fitted attributes.

Thin adapters over the functional API for pipeline-style use.  ``X`` is a
:class:`Dataset` (or anything :func:`as_dataset` accepts); labels ride on
the tasks themselves, so ``y`` is never passed separately.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .data import Dataset, TaskSeries
from .dp import DpConfig, fit_dp, occupied_components
from .em import FitConfig, fit
from .inference import (
    classify_dataset,
    fit_classifier,
    map_cluster,
    predict_task,
)
from .kernels import RbfParams

__all__ = [
    "as_dataset",
    "GroupedGPMixture",
    "DirichletGPMixture",
    "PeriodicSeriesClassifier",
]


def as_dataset(x, period: float = 1.0) -> Dataset:
    """Coerce input to a Dataset.

    Accepts a Dataset (returned as-is), an iterable of TaskSeries, or an
    iterable of ``(task_id, times, values[, label])`` tuples with times in
    original units.
    """
    if isinstance(x, Dataset):
        return x
    tasks = []
    for item in x:
        if isinstance(item, TaskSeries):
            tasks.append(item)
            continue
        if not isinstance(item, (tuple, list)) or len(item) not in (3, 4):
            raise ValueError(
                "expected TaskSeries or (task_id, times, values[, label]) tuples"
            )
        task_id, times, values = item[0], np.asarray(item[1], dtype=float), item[2]
        label = item[3] if len(item) == 4 else None
        tasks.append(
            TaskSeries(
                task_id=str(task_id),
                times=times / period,
                values=np.asarray(values, dtype=float),
                label=label,
            )
        )
    return Dataset(tasks=tuple(tasks), period=period)


class GroupedGPMixture(BaseEstimator):
    """Mixture of shifted group curves with GP individual effects."""

    def __init__(
        self,
        n_clusters: int = 3,
        restarts: int = 5,
        tol: float = 1e-5,
        max_iter: int = 200,
        seed: int | None = None,
        shift_grid_size: int | None = None,
        kernel_mode: str = "rbf",
        group_amplitude: float = 1.0,
        group_s_den: float = 0.04,
        period: float = 1.0,
    ) -> None:
        self.n_clusters = n_clusters
        self.restarts = restarts
        self.tol = tol
        self.max_iter = max_iter
        self.seed = seed
        self.shift_grid_size = shift_grid_size
        self.kernel_mode = kernel_mode
        self.group_amplitude = group_amplitude
        self.group_s_den = group_s_den
        self.period = period

    def _config(self) -> FitConfig:
        return FitConfig(
            n_clusters=self.n_clusters,
            restarts=self.restarts,
            tol=self.tol,
            max_iter=self.max_iter,
            seed=self.seed,
            shift_grid_size=self.shift_grid_size,
            kernel_mode=self.kernel_mode,
            group_kernel=RbfParams(self.group_amplitude, self.group_s_den),
        )

    def fit(self, X, y=None):
        dataset = as_dataset(X, self.period)
        self.dataset_ = dataset
        self.model_, self.report_ = fit(dataset, self._config())
        self.responsibilities_ = np.asarray(
            self.report_["responsibilities"], dtype=float
        )
        self.labels_ = map_cluster(self.responsibilities_)
        return self

    def predict(self, times, task: int | str = 0) -> np.ndarray:
        """Regression values of one training task at ``times`` (original units)."""
        if not hasattr(self, "model_"):
            raise RuntimeError("estimator is not fitted")
        return predict_task(self.model_, self.dataset_, task, np.asarray(times))


class DirichletGPMixture(GroupedGPMixture):
    """Stick-breaking variant; the component count adapts up to a cap."""

    def __init__(
        self,
        truncation: int = 10,
        concentration: float = 1.0,
        restarts: int = 5,
        tol: float = 1e-5,
        max_iter: int = 200,
        seed: int | None = None,
        shift_grid_size: int | None = None,
        kernel_mode: str = "rbf",
        group_amplitude: float = 1.0,
        group_s_den: float = 0.04,
        period: float = 1.0,
    ) -> None:
        super().__init__(
            n_clusters=truncation,
            restarts=restarts,
            tol=tol,
            max_iter=max_iter,
            seed=seed,
            shift_grid_size=shift_grid_size,
            kernel_mode=kernel_mode,
            group_amplitude=group_amplitude,
            group_s_den=group_s_den,
            period=period,
        )
        self.truncation = truncation
        self.concentration = concentration

    def _config(self) -> DpConfig:
        return DpConfig(
            n_clusters=self.truncation,
            restarts=self.restarts,
            tol=self.tol,
            max_iter=self.max_iter,
            seed=self.seed,
            shift_grid_size=self.shift_grid_size,
            kernel_mode=self.kernel_mode,
            group_kernel=RbfParams(self.group_amplitude, self.group_s_den),
            truncation=self.truncation,
            concentration=self.concentration,
        )

    def fit(self, X, y=None):
        dataset = as_dataset(X, self.period)
        self.dataset_ = dataset
        self.model_, self.report_ = fit_dp(dataset, self._config())
        self.responsibilities_ = np.asarray(
            self.report_["responsibilities"], dtype=float
        )
        self.labels_ = map_cluster(self.responsibilities_)
        self.n_components_ = occupied_components(self.responsibilities_)
        return self


class PeriodicSeriesClassifier(BaseEstimator):
    """Generative classifier: one mixture per label, MAP label rule."""

    def __init__(
        self,
        n_clusters: int = 1,
        restarts: int = 5,
        tol: float = 1e-5,
        max_iter: int = 200,
        seed: int | None = None,
        shift_grid_size: int | None = None,
        kernel_mode: str = "rbf",
        group_amplitude: float = 1.0,
        group_s_den: float = 0.04,
        period: float = 1.0,
    ) -> None:
        self.n_clusters = n_clusters
        self.restarts = restarts
        self.tol = tol
        self.max_iter = max_iter
        self.seed = seed
        self.shift_grid_size = shift_grid_size
        self.kernel_mode = kernel_mode
        self.group_amplitude = group_amplitude
        self.group_s_den = group_s_den
        self.period = period

    def fit(self, X, y=None):
        dataset = as_dataset(X, self.period)
        config = FitConfig(
            n_clusters=self.n_clusters,
            restarts=self.restarts,
            tol=self.tol,
            max_iter=self.max_iter,
            seed=self.seed,
            shift_grid_size=self.shift_grid_size,
            kernel_mode=self.kernel_mode,
            group_kernel=RbfParams(self.group_amplitude, self.group_s_den),
        )
        self.bundle_, self.reports_ = fit_classifier(dataset, config)
        self.classes_ = list(self.bundle_.labels)
        return self

    def predict(self, X) -> list[str]:
        if not hasattr(self, "bundle_"):
            raise RuntimeError("estimator is not fitted")
        return classify_dataset(self.bundle_, as_dataset(X, self.period))
