"""Task collections on a shared periodic domain.

A task is one irregularly sampled periodic series.  All tasks in a
:class:`Dataset` share a period; times are stored internally on the unit
circle (original times divided by the declared period) so every downstream
computation can assume period 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .validation import check_finite_array, check_positive_scalar

__all__ = [
    "TaskSeries",
    "DistinctGrid",
    "Dataset",
    "build_distinct_grid",
    "snap_to_grid",
    "normalize_series",
]


@dataclass(frozen=True)
class TaskSeries:
    """One sampled series.

    Parameters
    ----------
    task_id : str
        Identifier, unique within a dataset.
    times : ndarray of shape (n,)
        Sample times, strictly increasing, finite.
    values : ndarray of shape (n,)
        Sample values, finite.
    label : str or None
        Optional class label.
    """

    task_id: str
    times: np.ndarray
    values: np.ndarray
    label: str | None = None

    def __post_init__(self) -> None:
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        check_finite_array(times, "times")
        check_finite_array(values, "values")
        if times.ndim != 1 or values.ndim != 1:
            raise ValueError("times and values must be 1-D")
        if times.shape != values.shape:
            raise ValueError(
                f"task {self.task_id!r}: times and values lengths differ "
                f"({times.size} vs {values.size})"
            )
        if times.size == 0:
            raise ValueError(f"task {self.task_id!r}: empty series")
        if np.any(np.diff(times) <= 0):
            raise ValueError(f"task {self.task_id!r}: times must be strictly increasing")

    @property
    def n_samples(self) -> int:
        return self.times.size


@dataclass(frozen=True)
class DistinctGrid:
    """Sorted union of all task times plus per-task selector index maps.

    ``points[selectors[j]] == tasks[j].times`` holds exactly; selectors play
    the role of the 0/1 selection matrices without materializing them.
    """

    points: np.ndarray
    selectors: tuple[np.ndarray, ...]

    @property
    def size(self) -> int:
        return self.points.size

    def selector_matrix(self, j: int) -> np.ndarray:
        """Dense 0/1 selection matrix of task ``j`` (n_j x grid size)."""
        sel = self.selectors[j]
        mat = np.zeros((sel.size, self.points.size))
        mat[np.arange(sel.size), sel] = 1.0
        return mat


def build_distinct_grid(tasks: list[TaskSeries]) -> DistinctGrid:
    """Build the distinct time vector and selector maps for ``tasks``.

    Returns
    -------
    DistinctGrid
        ``points`` is the sorted union of all task times (exact float
        uniqueness, no tolerance merging); ``selectors[j][r]`` is the grid
        index of observation ``r`` of task ``j``.
    """
    if not tasks:
        raise ValueError("no tasks")
    all_times = np.concatenate([t.times for t in tasks])
    points = np.unique(all_times)
    selectors = []
    for task in tasks:
        sel = np.searchsorted(points, task.times)
        # unique() plus searchsorted guarantees an exact hit for every time
        if not np.array_equal(points[sel], task.times):
            raise AssertionError("grid selector round-trip failed")
        selectors.append(sel.astype(np.intp))
    return DistinctGrid(points=points, selectors=tuple(selectors))


@dataclass(frozen=True)
class Dataset:
    """Tasks sharing one period, with their distinct grid.

    ``period`` is the original-unit period; task times are already divided
    by it, so internally every time lies in [0, 1).  ``snap_resolution`` is
    set by :func:`snap_to_grid` so fitting can default its shift grid to the
    snapping grid.
    """

    tasks: tuple[TaskSeries, ...]
    period: float = 1.0
    grid: DistinctGrid = field(init=False)
    snap_resolution: int | None = None

    def __post_init__(self) -> None:
        check_positive_scalar(self.period, "period")
        tasks = tuple(self.tasks)
        object.__setattr__(self, "tasks", tasks)
        seen: set[str] = set()
        for task in tasks:
            if task.task_id in seen:
                raise ValueError(f"duplicate task_id {task.task_id!r}")
            seen.add(task.task_id)
            if task.times[0] < 0.0 or task.times[-1] >= 1.0:
                raise ValueError(
                    f"task {task.task_id!r}: internal times must lie in [0, 1); "
                    "divide original times by the period at ingestion"
                )
        object.__setattr__(self, "grid", build_distinct_grid(list(tasks)))

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    @property
    def n_observations(self) -> int:
        return int(sum(t.n_samples for t in self.tasks))

    @property
    def task_ids(self) -> list[str]:
        return [t.task_id for t in self.tasks]

    def task_index(self, task_id: str) -> int:
        for j, task in enumerate(self.tasks):
            if task.task_id == task_id:
                return j
        raise KeyError(f"unknown task_id {task_id!r}")

    def is_synchronous(self) -> bool:
        """True when every task samples the full grid (identity selectors)."""
        n = self.grid.size
        return all(
            sel.size == n and np.array_equal(sel, np.arange(n))
            for sel in self.grid.selectors
        )

    def labels(self) -> list[str | None]:
        return [t.label for t in self.tasks]


def snap_to_grid(dataset: Dataset, resolution: int) -> Dataset:
    """Snap every observation time to the uniform grid {i/resolution}.

    Midpoint ties round half up; an index rounding to ``resolution`` wraps
    to 0.  Observations of one task landing on the same grid point are
    merged by averaging their values (order-invariant mean).
    """
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    new_tasks = []
    for task in dataset.tasks:
        idx = np.floor(task.times * resolution + 0.5).astype(np.intp) % resolution
        order = np.argsort(idx, kind="stable")
        idx_sorted = idx[order]
        vals_sorted = task.values[order]
        uniq, start = np.unique(idx_sorted, return_index=True)
        sums = np.add.reduceat(vals_sorted, start)
        counts = np.diff(np.append(start, idx_sorted.size))
        new_tasks.append(
            TaskSeries(
                task_id=task.task_id,
                times=uniq / resolution,
                values=sums / counts,
                label=task.label,
            )
        )
    return Dataset(tasks=tuple(new_tasks), period=dataset.period,
                   snap_resolution=resolution)


def normalize_series(task: TaskSeries) -> TaskSeries:
    """Return the task standardized to zero mean, unit variance.

    Uses the population convention (divisor n).  A constant series has no
    scale and is rejected.
    """
    mean = float(np.mean(task.values))
    std = float(np.std(task.values))
    if std == 0.0:
        raise ValueError(f"task {task.task_id!r}: zero variance, cannot normalize")
    return replace(task, values=(task.values - mean) / std)
