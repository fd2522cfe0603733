"""Versioned JSON documents for fitted models and classifier bundles."""

import json

import numpy as np
import pytest

from gmtgp.data import Dataset, TaskSeries
from gmtgp.dp import DpModel
from gmtgp.em import GmtModel, GroupEffect
from gmtgp.inference import ClassifierBundle
from gmtgp.kernels import FixedKernel, RbfKernel, RbfParams
from gmtgp.serialization import (
    SCHEMA_VERSION,
    deserialize_classifier,
    deserialize_model,
    load_classifier,
    load_model,
    save_classifier,
    save_model,
    serialize_classifier,
    serialize_model,
)
from gmtgp.shifts import ShiftGrid


def _gmt_model(rng, M=4, n=6, k=2, fixed_kernel=False):
    grid = np.arange(n) / n
    groups = [
        GroupEffect(coef=rng.normal(size=n), values=rng.normal(size=n))
        for _ in range(k)
    ]
    if fixed_kernel:
        a = rng.normal(size=(n, n + 2))
        indiv = FixedKernel(a @ a.T / (n + 2))
    else:
        indiv = RbfKernel(RbfParams(amplitude=0.31, s_den=0.071))
    return GmtModel(
        grid_points=grid,
        shift_grid=ShiftGrid(n),
        groups=groups,
        shift_idx=rng.integers(n, size=(M, k)).astype(np.intp),
        mixture=rng.dirichlet(np.ones(k)),
        noise_var=float(rng.uniform(0.01, 0.2)),
        indiv_kernel=indiv,
        group_kernel=RbfKernel(RbfParams(amplitude=1.0, s_den=0.04)),
        period=10000.0 / 99.0,
    )


def _dp_model(rng, M=4, n=6, T=3):
    base = _gmt_model(rng, M=M, n=n, k=T)
    return DpModel(
        grid_points=base.grid_points,
        shift_grid=base.shift_grid,
        groups=base.groups,
        shift_idx=base.shift_idx,
        mixture=base.mixture,
        noise_var=base.noise_var,
        indiv_kernel=base.indiv_kernel,
        group_kernel=base.group_kernel,
        period=base.period,
        beta_params=rng.uniform(0.5, 9.0, size=(T - 1, 2)),
        concentration=0.8,
    )


def _assert_models_equal(a, b):
    assert type(a) is type(b)
    np.testing.assert_array_equal(a.grid_points, b.grid_points)
    assert a.shift_grid.count == b.shift_grid.count
    np.testing.assert_array_equal(a.shift_idx, b.shift_idx)
    np.testing.assert_array_equal(a.mixture, b.mixture)
    assert a.noise_var == b.noise_var
    assert a.period == b.period
    for ga, gb in zip(a.groups, b.groups):
        np.testing.assert_array_equal(ga.coef, gb.coef)
        np.testing.assert_array_equal(ga.values, gb.values)
        assert ga.flat_prior == gb.flat_prior
    if isinstance(a.indiv_kernel, RbfKernel):
        assert a.indiv_kernel.params == b.indiv_kernel.params
    else:
        np.testing.assert_array_equal(
            a.indiv_kernel.matrix_full, b.indiv_kernel.matrix_full
        )
    if a.group_kernel is None:
        assert b.group_kernel is None
    else:
        assert a.group_kernel.params == b.group_kernel.params


class TestModelRoundTrip:
    def test_gmt_document_survives_json_exactly(self):
        rng = np.random.default_rng(1)
        model = _gmt_model(rng)
        doc = json.loads(json.dumps(serialize_model(model)))
        back = deserialize_model(doc)
        _assert_models_equal(model, back)

    def test_dp_document_survives_json_exactly(self):
        rng = np.random.default_rng(2)
        model = _dp_model(rng)
        doc = json.loads(json.dumps(serialize_model(model)))
        back = deserialize_model(doc)
        _assert_models_equal(model, back)
        np.testing.assert_array_equal(model.beta_params, back.beta_params)
        assert back.concentration == 0.8
        assert isinstance(back, DpModel)

    def test_fixed_kernel_matrix_round_trips(self):
        rng = np.random.default_rng(3)
        model = _gmt_model(rng, fixed_kernel=True)
        back = deserialize_model(json.loads(json.dumps(serialize_model(model))))
        _assert_models_equal(model, back)

    def test_file_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        model = _gmt_model(rng)
        p = tmp_path / "model.json"
        save_model(model, p)
        _assert_models_equal(model, load_model(p))

    def test_document_is_version_tagged(self):
        rng = np.random.default_rng(5)
        doc = serialize_model(_gmt_model(rng))
        assert doc["version"] == SCHEMA_VERSION
        assert doc["kind"] == "gmt"
        assert serialize_model(_dp_model(rng))["kind"] == "dp"


class TestModelValidation:
    def _doc(self, seed=6):
        return serialize_model(_gmt_model(np.random.default_rng(seed)))

    def test_unknown_version_rejected(self):
        doc = self._doc()
        doc["version"] = "999"
        with pytest.raises(ValueError, match="version"):
            deserialize_model(doc)

    def test_unknown_kind_rejected(self):
        doc = self._doc()
        doc["kind"] = "mystery"
        with pytest.raises(ValueError, match="kind"):
            deserialize_model(doc)

    def test_mixture_length_must_match_groups(self):
        doc = self._doc()
        doc["mixture"] = doc["mixture"] + [0.1]
        with pytest.raises(ValueError, match="mixture"):
            deserialize_model(doc)

    def test_shift_table_shape_checked(self):
        doc = self._doc()
        doc["shift_idx"] = [[0], [1]]
        with pytest.raises(ValueError, match="shift_idx"):
            deserialize_model(doc)

    def test_unknown_kernel_type_rejected(self):
        doc = self._doc()
        doc["indiv_kernel"] = {"type": "laplace"}
        with pytest.raises(ValueError, match="kernel type"):
            deserialize_model(doc)


class TestClassifierRoundTrip:
    def _bundle(self, rng):
        return ClassifierBundle(
            labels=["a", "b", "c"],
            models=[_gmt_model(rng, k=1) for _ in range(3)],
            priors=np.array([0.5, 0.3, 0.2]),
        )

    def test_bundle_survives_json_exactly(self):
        rng = np.random.default_rng(7)
        bundle = self._bundle(rng)
        back = deserialize_classifier(
            json.loads(json.dumps(serialize_classifier(bundle)))
        )
        assert back.labels == ["a", "b", "c"]
        np.testing.assert_array_equal(back.priors, bundle.priors)
        for ma, mb in zip(bundle.models, back.models):
            _assert_models_equal(ma, mb)

    def test_file_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        bundle = self._bundle(rng)
        p = tmp_path / "clf.json"
        save_classifier(bundle, p)
        back = load_classifier(p)
        assert back.labels == bundle.labels

    def test_wrong_kind_rejected(self):
        rng = np.random.default_rng(9)
        doc = serialize_model(_gmt_model(rng))
        with pytest.raises(ValueError, match="classifier"):
            deserialize_classifier(doc | {"version": SCHEMA_VERSION})
