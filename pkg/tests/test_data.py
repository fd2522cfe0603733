"""Task containers, the distinct grid, and grid snapping."""

import numpy as np
import pytest

from gmtgp.data import (
    Dataset,
    TaskSeries,
    build_distinct_grid,
    normalize_series,
    snap_to_grid,
)


def _task(task_id, times, values, label=None):
    return TaskSeries(task_id=task_id, times=np.asarray(times, dtype=float),
                      values=np.asarray(values, dtype=float), label=label)


class TestTaskSeries:
    def test_valid_series_round_trips(self):
        t = _task("a", [0.1, 0.2, 0.5], [1.0, -2.0, 3.0], label="x")
        assert t.n_samples == 3
        assert t.label == "x"
        np.testing.assert_array_equal(t.times, [0.1, 0.2, 0.5])

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValueError, match="lengths differ"):
            _task("a", [0.0, 0.5], [1.0])

    def test_rejects_empty(self):
        with pytest.raises(ValueError, match="empty"):
            _task("a", [], [])

    def test_rejects_non_increasing_times(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            _task("a", [0.3, 0.3], [1.0, 2.0])
        with pytest.raises(ValueError, match="strictly increasing"):
            _task("a", [0.3, 0.1], [1.0, 2.0])

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            _task("a", [0.0, np.nan], [1.0, 2.0])
        with pytest.raises(ValueError):
            _task("a", [0.0, 0.5], [np.inf, 2.0])

    def test_rejects_2d(self):
        with pytest.raises(ValueError, match="1-D"):
            TaskSeries("a", np.zeros((2, 2)), np.zeros((2, 2)))


class TestDistinctGrid:
    def test_points_are_sorted_union(self):
        tasks = [_task("a", [0.1, 0.4], [0, 0]), _task("b", [0.2, 0.4], [0, 0])]
        grid = build_distinct_grid(tasks)
        np.testing.assert_array_equal(grid.points, [0.1, 0.2, 0.4])

    def test_selectors_recover_task_times_exactly(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            tasks = []
            pool = np.sort(rng.uniform(0.0, 1.0, size=12))
            for j in range(4):
                take = np.sort(rng.choice(12, size=rng.integers(2, 7), replace=False))
                tasks.append(_task(f"t{j}", pool[take], rng.normal(size=take.size)))
            grid = build_distinct_grid(tasks)
            for j, task in enumerate(tasks):
                np.testing.assert_array_equal(grid.points[grid.selectors[j]],
                                              task.times)

    def test_selector_matrix_matches_index_map(self):
        tasks = [_task("a", [0.1, 0.4], [0, 0]), _task("b", [0.2, 0.4], [0, 0])]
        grid = build_distinct_grid(tasks)
        mat = grid.selector_matrix(1)
        assert mat.shape == (2, 3)
        np.testing.assert_array_equal(mat @ grid.points, tasks[1].times)

    def test_rejects_empty_task_list(self):
        with pytest.raises(ValueError, match="no tasks"):
            build_distinct_grid([])


class TestDataset:
    def test_basic_properties(self):
        ds = Dataset(tasks=(_task("a", [0.0, 0.5], [1, 2], label="u"),
                            _task("b", [0.25], [3])), period=2.0)
        assert ds.n_tasks == 2
        assert ds.n_observations == 3
        assert ds.task_ids == ["a", "b"]
        assert ds.task_index("b") == 1
        assert ds.labels() == ["u", None]
        with pytest.raises(KeyError):
            ds.task_index("zzz")

    def test_rejects_duplicate_ids(self):
        with pytest.raises(ValueError, match="duplicate"):
            Dataset(tasks=(_task("a", [0.0], [1]), _task("a", [0.5], [2])))

    def test_rejects_times_outside_unit_interval(self):
        with pytest.raises(ValueError, match="\\[0, 1\\)"):
            Dataset(tasks=(_task("a", [0.0, 1.0], [1, 2]),))
        with pytest.raises(ValueError, match="\\[0, 1\\)"):
            Dataset(tasks=(_task("a", [-0.1, 0.5], [1, 2]),))

    def test_rejects_bad_period(self):
        with pytest.raises(ValueError):
            Dataset(tasks=(_task("a", [0.0], [1]),), period=0.0)

    def test_synchronous_detection(self):
        grid = np.arange(4) / 4.0
        sync = Dataset(tasks=(_task("a", grid, np.ones(4)),
                              _task("b", grid, np.zeros(4))))
        assert sync.is_synchronous()
        askew = Dataset(tasks=(_task("a", grid, np.ones(4)),
                               _task("b", grid[:3], np.zeros(3))))
        assert not askew.is_synchronous()


class TestSnapToGrid:
    def test_times_land_on_uniform_grid(self):
        ds = Dataset(tasks=(_task("a", [0.09, 0.32, 0.61], [1.0, 2.0, 3.0]),))
        out = snap_to_grid(ds, 10)
        np.testing.assert_array_equal(out.tasks[0].times, [0.1, 0.3, 0.6])
        assert out.snap_resolution == 10
        assert out.period == ds.period

    def test_midpoint_rounds_up_and_wraps(self):
        # 0.95 * 10 + 0.5 = 10.0 -> index 10 -> wraps to grid point 0
        ds = Dataset(tasks=(_task("a", [0.35, 0.95], [1.0, 2.0]),))
        out = snap_to_grid(ds, 10)
        np.testing.assert_array_equal(out.tasks[0].times, [0.0, 0.4])
        np.testing.assert_array_equal(out.tasks[0].values, [2.0, 1.0])

    def test_colliding_observations_average(self):
        ds = Dataset(tasks=(_task("a", [0.199, 0.201, 0.8], [1.0, 3.0, 5.0]),))
        out = snap_to_grid(ds, 10)
        np.testing.assert_array_equal(out.tasks[0].times, [0.2, 0.8])
        np.testing.assert_allclose(out.tasks[0].values, [2.0, 5.0])

    def test_merge_mean_is_order_invariant(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            times = np.sort(rng.uniform(0.0, 1.0, size=9))
            vals = rng.normal(size=9)
            ds = Dataset(tasks=(_task("a", times, vals),))
            out = snap_to_grid(ds, 4)
            # brute-force reference: group by snapped index, average
            idx = np.floor(times * 4 + 0.5).astype(int) % 4
            for g in np.unique(idx):
                expect = vals[idx == g].mean()
                at = np.flatnonzero(np.isclose(out.tasks[0].times, g / 4.0))
                assert at.size == 1
                np.testing.assert_allclose(out.tasks[0].values[at[0]], expect)

    def test_rejects_bad_resolution(self):
        ds = Dataset(tasks=(_task("a", [0.5], [1.0]),))
        with pytest.raises(ValueError):
            snap_to_grid(ds, 0)


class TestNormalizeSeries:
    def test_zero_mean_unit_variance(self):
        rng = np.random.default_rng(11)
        t = _task("a", np.sort(rng.uniform(0, 1, 50)), rng.normal(3.0, 2.5, 50))
        out = normalize_series(t)
        assert abs(float(out.values.mean())) < 1e-12
        np.testing.assert_allclose(float(out.values.std()), 1.0, atol=1e-12)
        np.testing.assert_array_equal(out.times, t.times)

    def test_rejects_constant_series(self):
        with pytest.raises(ValueError, match="zero variance"):
            normalize_series(_task("a", [0.1, 0.2], [5.0, 5.0]))
