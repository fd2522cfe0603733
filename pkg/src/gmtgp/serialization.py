"""Versioned JSON serialization of fitted models.

Documents carry a mandatory ``version`` field (currently ``"1"``); unknown
versions are rejected.  Floats pass through ``json`` untouched, which emits
shortest round-trip decimal strings, so numeric fields survive a
serialize/deserialize cycle bit-exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .dp import DpModel
from .em import GmtModel, GroupEffect
from .inference import ClassifierBundle
from .kernels import FixedKernel, RbfKernel, RbfParams
from .shifts import ShiftGrid

__all__ = [
    "SCHEMA_VERSION",
    "serialize_model",
    "deserialize_model",
    "serialize_classifier",
    "deserialize_classifier",
    "save_model",
    "load_model",
    "save_classifier",
    "load_classifier",
]

SCHEMA_VERSION = "1"


def _kernel_doc(kernel: RbfKernel | FixedKernel | None) -> dict | None:
    if kernel is None:
        return None
    if isinstance(kernel, RbfKernel):
        return {
            "type": "rbf",
            "amplitude": float(kernel.params.amplitude),
            "s_den": float(kernel.params.s_den),
        }
    return {"type": "matrix", "values": [[float(v) for v in row] for row in kernel.matrix_full]}


def _kernel_from_doc(doc: dict | None) -> RbfKernel | FixedKernel | None:
    if doc is None:
        return None
    if doc["type"] == "rbf":
        return RbfKernel(RbfParams(amplitude=doc["amplitude"], s_den=doc["s_den"]))
    if doc["type"] == "matrix":
        return FixedKernel(np.asarray(doc["values"], dtype=float))
    raise ValueError(f"unknown kernel type {doc['type']!r}")


def serialize_model(model: GmtModel) -> dict:
    """Model to a JSON-ready dict (version-tagged, lossless)."""
    doc = {
        "version": SCHEMA_VERSION,
        "kind": "dp" if isinstance(model, DpModel) else "gmt",
        "period": float(model.period),
        "grid_points": [float(v) for v in model.grid_points],
        "shift_grid_size": int(model.shift_grid.count),
        "noise_var": float(model.noise_var),
        "mixture": [float(v) for v in model.mixture],
        "shift_idx": [[int(v) for v in row] for row in model.shift_idx],
        "groups": [
            {
                "coef": [float(v) for v in g.coef],
                "values": [float(v) for v in g.values],
                "flat_prior": bool(g.flat_prior),
            }
            for g in model.groups
        ],
        "group_kernel": _kernel_doc(model.group_kernel),
        "indiv_kernel": _kernel_doc(model.indiv_kernel),
    }
    if isinstance(model, DpModel):
        doc["beta_params"] = [[float(a), float(b)] for a, b in model.beta_params]
        doc["concentration"] = float(model.concentration)
    return doc


def deserialize_model(doc: dict) -> GmtModel:
    """Rebuild a model from its document; rejects unknown versions."""
    version = doc.get("version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported model document version {version!r}")
    kind = doc.get("kind")
    if kind not in ("gmt", "dp"):
        raise ValueError(f"unknown model kind {kind!r}")
    groups = [
        GroupEffect(
            coef=np.asarray(g["coef"], dtype=float),
            values=np.asarray(g["values"], dtype=float),
            flat_prior=bool(g["flat_prior"]),
        )
        for g in doc["groups"]
    ]
    mixture = np.asarray(doc["mixture"], dtype=float)
    if mixture.size != len(groups):
        raise ValueError("mixture length does not match the group count")
    shift_idx = np.asarray(doc["shift_idx"], dtype=np.intp)
    if shift_idx.ndim != 2 or shift_idx.shape[1] != len(groups):
        raise ValueError("shift_idx must be a (tasks, clusters) table")
    common = {
        "grid_points": np.asarray(doc["grid_points"], dtype=float),
        "shift_grid": ShiftGrid(int(doc["shift_grid_size"])),
        "groups": groups,
        "shift_idx": shift_idx,
        "mixture": mixture,
        "noise_var": float(doc["noise_var"]),
        "indiv_kernel": _kernel_from_doc(doc["indiv_kernel"]),
        "group_kernel": _kernel_from_doc(doc["group_kernel"]),
        "period": float(doc["period"]),
    }
    if kind == "dp":
        return DpModel(
            **common,
            beta_params=np.asarray(doc["beta_params"], dtype=float),
            concentration=float(doc["concentration"]),
        )
    return GmtModel(**common)


def serialize_classifier(bundle: ClassifierBundle) -> dict:
    """Classifier bundle to a JSON-ready dict; label order is preserved."""
    return {
        "version": SCHEMA_VERSION,
        "kind": "classifier",
        "labels": list(bundle.labels),
        "priors": [float(v) for v in bundle.priors],
        "models": [serialize_model(m) for m in bundle.models],
    }


def deserialize_classifier(doc: dict) -> ClassifierBundle:
    version = doc.get("version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported classifier document version {version!r}")
    if doc.get("kind") != "classifier":
        raise ValueError("document is not a classifier bundle")
    return ClassifierBundle(
        labels=list(doc["labels"]),
        models=[deserialize_model(m) for m in doc["models"]],
        priors=np.asarray(doc["priors"], dtype=float),
    )


def save_model(model: GmtModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(serialize_model(model)) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> GmtModel:
    return deserialize_model(json.loads(Path(path).read_text(encoding="utf-8")))


def save_classifier(bundle: ClassifierBundle, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(serialize_classifier(bundle)) + "\n", encoding="utf-8"
    )


def load_classifier(path: str | Path) -> ClassifierBundle:
    return deserialize_classifier(json.loads(Path(path).read_text(encoding="utf-8")))
