"""Prediction, classification, discovery, model-order selection, baselines."""

import numpy as np
import pytest

from gmtgp.data import Dataset, TaskSeries
from gmtgp.dp import DpConfig
from gmtgp.em import FitConfig, GmtModel, GroupEffect, e_step, fit
from gmtgp.inference import (
    ClassifierBundle,
    bic,
    bic_select,
    class_discovery,
    classify,
    classify_dataset,
    fit_classifier,
    fit_single_task,
    map_cluster,
    phased_gmm_fit,
    predict_task,
    universal_phasing,
)
from gmtgp.kernels import FixedKernel, RbfKernel, RbfParams
from gmtgp.shifts import ShiftGrid


def _uniform_dataset(values_by_task, n_grid, labels=None, period=1.0):
    times = np.arange(n_grid) / n_grid
    tasks = tuple(
        TaskSeries(
            task_id=f"t{j}",
            times=times,
            values=np.asarray(v, dtype=float),
            label=None if labels is None else labels[j],
        )
        for j, v in enumerate(values_by_task)
    )
    return Dataset(tasks=tasks, period=period)


def _hand_model(dataset, groups_values, mixture, noise_var, indiv, period=1.0):
    group_kernel = RbfKernel(RbfParams(amplitude=1.0, s_den=0.05))
    kmat = group_kernel.matrix(dataset.grid.points)
    groups = [
        GroupEffect(coef=np.linalg.solve(kmat, np.asarray(v, dtype=float)), values=np.asarray(v, dtype=float))
        for v in groups_values
    ]
    return GmtModel(
        grid_points=dataset.grid.points,
        shift_grid=ShiftGrid(1),
        groups=groups,
        shift_idx=np.zeros((dataset.n_tasks, len(groups)), dtype=np.intp),
        mixture=np.asarray(mixture, dtype=float),
        noise_var=noise_var,
        indiv_kernel=indiv,
        group_kernel=group_kernel,
        period=period,
    )


class TestMapCluster:
    def test_picks_the_largest_entry(self):
        resp = np.array([[0.2, 0.8], [0.9, 0.1]])
        np.testing.assert_array_equal(map_cluster(resp), [1, 0])

    def test_ties_go_to_the_lowest_index(self):
        resp = np.array([[0.5, 0.5], [1 / 3, 1 / 3]])
        np.testing.assert_array_equal(map_cluster(resp), [0, 0])


class TestPredictTask:
    def test_reproduces_training_values_at_low_noise(self):
        rng = np.random.default_rng(40)
        y = rng.normal(size=8)
        ds = _uniform_dataset([y], 8)
        model = _hand_model(
            ds,
            groups_values=[np.zeros(8)],
            mixture=[1.0],
            noise_var=1e-6,
            indiv=RbfKernel(RbfParams(amplitude=1.0, s_den=0.02)),
        )
        pred = predict_task(model, ds, 0, ds.tasks[0].times)
        np.testing.assert_allclose(pred, y, atol=1e-5)

    def test_zero_residuals_follow_the_group_curve(self):
        times = np.arange(8) / 8
        curve = np.sin(2.0 * np.pi * times)
        ds = _uniform_dataset([curve], 8)
        model = _hand_model(
            ds,
            groups_values=[curve],
            mixture=[1.0],
            noise_var=0.01,
            indiv=RbfKernel(RbfParams(amplitude=0.3, s_den=0.05)),
        )
        query = np.array([0.1, 0.33, 0.71])
        pred = predict_task(model, ds, 0, query)
        expect = model.group_kernel.cross(query, ds.grid.points) @ model.groups[0].coef
        np.testing.assert_allclose(pred, expect, atol=1e-10)

    def test_task_by_id_matches_task_by_index(self):
        rng = np.random.default_rng(41)
        ds = _uniform_dataset([rng.normal(size=6) for _ in range(3)], 6)
        model = _hand_model(
            ds,
            groups_values=[np.zeros(6)],
            mixture=[1.0],
            noise_var=0.1,
            indiv=RbfKernel(RbfParams(amplitude=0.5, s_den=0.1)),
        )
        q = np.array([0.2, 0.6])
        np.testing.assert_allclose(
            predict_task(model, ds, "t1", q), predict_task(model, ds, 1, q)
        )

    def test_query_times_are_in_original_units(self):
        # with period 2 the query 1.2 lands at internal position 0.6
        times = np.arange(8) / 8
        curve = np.cos(2.0 * np.pi * times)
        ds = _uniform_dataset([curve], 8, period=2.0)
        model = _hand_model(
            ds,
            groups_values=[curve],
            mixture=[1.0],
            noise_var=0.01,
            indiv=RbfKernel(RbfParams(amplitude=0.3, s_den=0.05)),
            period=2.0,
        )
        by_original = predict_task(model, ds, 0, np.array([1.2]))
        expect = model.group_kernel.cross(np.array([0.6]), ds.grid.points) @ model.groups[0].coef
        np.testing.assert_allclose(by_original, expect, atol=1e-10)


def _labeled_two_class(rng, per_class=6, n=12, noise=0.05):
    times = np.arange(n) / n
    curves = {
        "a": np.sin(2.0 * np.pi * times),
        "b": np.cos(4.0 * np.pi * times) - 0.5,
    }
    tasks = []
    for lab, curve in curves.items():
        for i in range(per_class):
            tasks.append(
                TaskSeries(
                    task_id=f"{lab}{i}",
                    times=times,
                    values=curve + noise * rng.normal(size=n),
                    label=lab,
                )
            )
    return Dataset(tasks=tuple(tasks), period=1.0)


class TestClassify:
    def _bundle(self, rng):
        ds = _labeled_two_class(rng)
        config = FitConfig(
            n_clusters=1, restarts=1, max_iter=30, seed=0, shift_grid_size=1
        )
        bundle, reports = fit_classifier(ds, config)
        return ds, bundle, reports

    def test_training_tasks_classify_correctly(self):
        rng = np.random.default_rng(50)
        ds, bundle, reports = self._bundle(rng)
        assert bundle.labels == ["a", "b"]
        assert set(reports) == {"a", "b"}
        np.testing.assert_allclose(bundle.priors, [0.5, 0.5])
        predicted = classify_dataset(bundle, ds)
        assert predicted == list(ds.labels())

    def test_scores_cover_every_label(self):
        rng = np.random.default_rng(51)
        ds, bundle, _ = self._bundle(rng)
        label, scores = classify(bundle, ds.tasks[0])
        assert label == "a"
        assert set(scores) == {"a", "b"}
        assert scores["a"] > scores["b"]

    def test_rotated_series_keeps_its_label_under_a_shift_grid(self):
        rng = np.random.default_rng(52)
        ds = _labeled_two_class(rng, n=16)
        config = FitConfig(
            n_clusters=1, restarts=1, max_iter=30, seed=0, shift_grid_size=16
        )
        bundle, _ = fit_classifier(ds, config)
        base = ds.tasks[2]
        rot = TaskSeries("probe", base.times, np.roll(base.values, 5))
        lab_base, scores_base = classify(bundle, base)
        lab_rot, scores_rot = classify(bundle, rot)
        assert lab_base == lab_rot == "a"
        # the individual kernel is aperiodic, so rotation moves the score a
        # little; it must stay far inside the label margin
        assert abs(scores_rot["a"] - scores_base["a"]) < 0.5
        assert scores_rot["a"] - scores_rot["b"] > 2.0

    def test_exact_score_ties_resolve_in_label_order(self):
        rng = np.random.default_rng(53)
        ds = _labeled_two_class(rng)
        config = FitConfig(
            n_clusters=1, restarts=1, max_iter=10, seed=0, shift_grid_size=1
        )
        model, _ = fit(ds, config)
        bundle = ClassifierBundle(
            labels=["x", "y"], models=[model, model], priors=np.array([0.5, 0.5])
        )
        label, scores = classify(bundle, ds.tasks[0])
        assert label == "x"
        assert scores["x"] == scores["y"]

    def test_unlabeled_task_rejected_by_fit_classifier(self):
        rng = np.random.default_rng(54)
        ds = _uniform_dataset([rng.normal(size=6) for _ in range(2)], 6)
        with pytest.raises(ValueError, match="label"):
            fit_classifier(ds, FitConfig(n_clusters=1, restarts=1))

    def test_series_outside_the_period_rejected(self):
        rng = np.random.default_rng(55)
        ds, bundle, _ = self._bundle(rng)
        bad = TaskSeries("probe", np.array([0.1, 1.7]), np.zeros(2))
        with pytest.raises(ValueError, match="period"):
            classify(bundle, bad)

    def test_dataset_period_mismatch_rejected(self):
        rng = np.random.default_rng(56)
        ds, bundle, _ = self._bundle(rng)
        other = Dataset(tasks=ds.tasks, period=2.0)
        with pytest.raises(ValueError, match="period"):
            classify_dataset(bundle, other)

    def test_bundle_validation(self):
        rng = np.random.default_rng(57)
        ds, bundle, _ = self._bundle(rng)
        with pytest.raises(ValueError, match="align"):
            ClassifierBundle(
                labels=["a"], models=bundle.models, priors=np.array([1.0])
            )
        with pytest.raises(ValueError, match="simplex"):
            ClassifierBundle(
                labels=bundle.labels, models=bundle.models, priors=np.array([0.7, 0.7])
            )


class TestClassDiscovery:
    def test_easy_clusters_inherit_reference_labels(self):
        rng = np.random.default_rng(60)
        ref = _labeled_two_class(rng, per_class=5)
        new = _labeled_two_class(rng, per_class=4)
        config = FitConfig(
            n_clusters=2, restarts=2, max_iter=40, seed=1, shift_grid_size=1
        )
        out = class_discovery(ref, new, config)
        assert out["accuracy"] == 1.0
        assert sorted(out["cluster_to_label"].values()) == ["a", "b"]
        assert len(out["labels"]) == new.n_tasks

    def test_clusters_without_reference_members_become_unknown(self):
        rng = np.random.default_rng(61)
        times = np.arange(12) / 12
        ref = _uniform_dataset(
            [np.sin(2.0 * np.pi * times) + 0.05 * rng.normal(size=12) for _ in range(5)],
            12,
            labels=["a"] * 5,
        )
        new = _uniform_dataset(
            [np.cos(4.0 * np.pi * times) - 1.0 + 0.05 * rng.normal(size=12) for _ in range(5)],
            12,
        )
        config = FitConfig(
            n_clusters=2, restarts=2, max_iter=40, seed=0, shift_grid_size=1
        )
        out = class_discovery(ref, new, config)
        assert out["labels"] == ["unknown"] * 5
        assert "accuracy" not in out

    def test_stick_breaking_config_is_accepted(self):
        rng = np.random.default_rng(62)
        ref = _labeled_two_class(rng, per_class=5)
        new = _labeled_two_class(rng, per_class=3)
        config = DpConfig(
            n_clusters=1,
            restarts=1,
            max_iter=40,
            seed=0,
            shift_grid_size=1,
            truncation=4,
            concentration=0.3,
        )
        out = class_discovery(ref, new, config)
        assert out["accuracy"] == 1.0

    def test_unlabeled_reference_rejected(self):
        rng = np.random.default_rng(63)
        ref = _uniform_dataset([rng.normal(size=6) for _ in range(3)], 6)
        with pytest.raises(ValueError, match="labeled"):
            class_discovery(ref, ref, FitConfig(n_clusters=1))


class TestBic:
    def test_matches_hand_computed_score(self):
        rng = np.random.default_rng(70)
        ds = _uniform_dataset([rng.normal(size=6) for _ in range(4)], 6)
        model = _hand_model(
            ds,
            groups_values=[rng.normal(size=6), rng.normal(size=6)],
            mixture=[0.5, 0.5],
            noise_var=0.4,
            indiv=RbfKernel(RbfParams(amplitude=0.5, s_den=0.1)),
        )
        loglik = e_step(model, ds).loglik
        p = 1 + 2 * 6 + 4 + 1 + 2
        expect = -2.0 * loglik + p * np.log(24)
        np.testing.assert_allclose(bic(model, ds), expect, rtol=1e-12)

    def test_fixed_kernel_counts_its_matrix_entries(self):
        rng = np.random.default_rng(71)
        ds = _uniform_dataset([rng.normal(size=4) for _ in range(3)], 4)
        a = rng.normal(size=(4, 6))
        model = _hand_model(
            ds,
            groups_values=[np.zeros(4)],
            mixture=[1.0],
            noise_var=0.4,
            indiv=FixedKernel(a @ a.T / 6),
        )
        loglik = e_step(model, ds).loglik
        p = 0 + 4 + 3 + 1 + 10
        expect = -2.0 * loglik + p * np.log(12)
        np.testing.assert_allclose(bic(model, ds), expect, rtol=1e-12)

    def test_selects_the_true_cluster_count(self):
        rng = np.random.default_rng(72)
        times = np.arange(8) / 8
        curves = [np.sin(2.0 * np.pi * times), np.cos(4.0 * np.pi * times) - 0.5]
        ds = _uniform_dataset(
            [curves[j % 2] + 0.05 * rng.normal(size=8) for j in range(12)], 8
        )
        config = FitConfig(restarts=2, max_iter=40, seed=0, shift_grid_size=1)
        k, table, model = bic_select(ds, [1, 2, 3], config)
        assert k == 2
        assert model.n_clusters == 2
        assert sorted(table) == [1, 2, 3]
        for entry in table.values():
            assert set(entry) == {"bic", "final_objective", "converged"}

    def test_duplicate_candidates_collapse(self):
        rng = np.random.default_rng(73)
        times = np.arange(6) / 6
        ds = _uniform_dataset(
            [np.sin(2.0 * np.pi * times) + 0.1 * rng.normal(size=6) for _ in range(6)],
            6,
        )
        config = FitConfig(restarts=1, max_iter=20, seed=0, shift_grid_size=1)
        k, table, _ = bic_select(ds, [2, 1, 2], config)
        assert sorted(table) == [1, 2]

    def test_empty_candidates_rejected(self):
        rng = np.random.default_rng(74)
        ds = _uniform_dataset([rng.normal(size=6)], 6)
        with pytest.raises(ValueError, match="k_values"):
            bic_select(ds, [], FitConfig())


class TestSingleTaskGp:
    def test_reproduces_training_points_at_low_noise(self):
        rng = np.random.default_rng(80)
        times = np.sort(rng.uniform(0, 1, size=10))
        y = np.sin(2.0 * np.pi * times)
        series = TaskSeries("t0", times, y)
        gp = fit_single_task(series, RbfParams(amplitude=1.0, s_den=0.1), 1e-10)
        np.testing.assert_allclose(gp.predict(times), y, atol=1e-4)

    def test_query_times_divided_by_the_period(self):
        times = np.arange(8) / 8
        y = np.cos(2.0 * np.pi * times)
        series = TaskSeries("t0", times, y)
        gp = fit_single_task(series, RbfParams(amplitude=1.0, s_den=0.1), 1e-10, period=3.0)
        direct = fit_single_task(series, RbfParams(amplitude=1.0, s_den=0.1), 1e-10)
        np.testing.assert_allclose(
            gp.predict(np.array([1.5])), direct.predict(np.array([0.5])), atol=1e-12
        )

    def test_negative_noise_rejected(self):
        series = TaskSeries("t0", np.array([0.1, 0.2]), np.zeros(2))
        with pytest.raises(ValueError, match="noise"):
            fit_single_task(series, RbfParams(amplitude=1.0, s_den=0.1), -1.0)


class TestPhasedGmmFit:
    def test_runs_on_synchronous_uniform_data(self):
        rng = np.random.default_rng(90)
        times = np.arange(8) / 8
        curves = [np.sin(2.0 * np.pi * times), np.cos(2.0 * np.pi * times)]
        ds = _uniform_dataset(
            [np.roll(curves[j % 2], rng.integers(8)) + 0.05 * rng.normal(size=8) for j in range(8)],
            8,
        )
        model, report = phased_gmm_fit(
            ds, FitConfig(n_clusters=2, restarts=2, max_iter=30, seed=0)
        )
        assert model.group_kernel is None
        assert isinstance(model.indiv_kernel, FixedKernel)
        assert report["kernel_mode"] == "phased-gmm"
        assert report["shift_grid_size"] == 8

    def test_irregular_sampling_rejected(self):
        rng = np.random.default_rng(91)
        t0 = np.sort(rng.uniform(0, 1, size=6))
        t1 = np.sort(rng.uniform(0, 1, size=6))
        ds = Dataset(
            tasks=(
                TaskSeries("t0", t0, rng.normal(size=6)),
                TaskSeries("t1", t1, rng.normal(size=6)),
            ),
            period=1.0,
        )
        with pytest.raises(ValueError, match="synchronous|uniform"):
            phased_gmm_fit(ds, FitConfig(n_clusters=1, restarts=1))


class TestUniversalPhasing:
    def test_matches_brute_force_window_scan(self):
        rng = np.random.default_rng(95)
        for _ in range(10):
            n = int(rng.integers(8, 40))
            v = rng.normal(size=n)
            frac = float(rng.uniform(0.05, 0.3))
            rotated, start = universal_phasing(v, frac)
            w = max(1, int(np.floor(frac * n + 0.5)))
            sums = [
                np.take(v, np.arange(s, s + w) % n).sum() for s in range(n)
            ]
            assert start == int(np.argmax(sums))
            np.testing.assert_array_equal(rotated, np.roll(v, -start))

    def test_idempotent_after_one_application(self):
        rng = np.random.default_rng(96)
        v = rng.normal(size=20)
        once, _ = universal_phasing(v, 0.1)
        twice, start = universal_phasing(once, 0.1)
        assert start == 0
        np.testing.assert_array_equal(twice, once)

    def test_constant_series_keeps_its_order(self):
        v = np.full(10, 3.0)
        rotated, start = universal_phasing(v)
        assert start == 0
        np.testing.assert_array_equal(rotated, v)

    def test_rejects_empty_and_matrix_input(self):
        with pytest.raises(ValueError):
            universal_phasing(np.zeros(0))
        with pytest.raises(ValueError):
            universal_phasing(np.zeros((3, 3)))
