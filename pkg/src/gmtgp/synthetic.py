"""Synthetic data generators and the regression benchmark harness.

The regression protocol: three group curves drawn from a GP on a uniform
100-point grid over [-50, 50], each task picking one curve, adding an
individual GP draw and white noise, and keeping only N grid positions
sampled without replacement.  Times map onto the unit circle exactly
(position i becomes i/100), with the period chosen so the original domain
is one full cycle.

The classification protocol reuses the machinery on the unit interval:
distinct class curves, random circular phase shifts that are grid
multiples, and balanced labeled train/test splits.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, TaskSeries
from .dp import DpConfig, fit_dp
from .em import FitConfig, GmtModel, e_step, fit
from .inference import (
    class_discovery,
    classify_dataset,
    fit_classifier,
    fit_single_task,
    predict_task,
)
from .kernels import RbfParams
from .linalg import robust_cholesky

logger = logging.getLogger(__name__)

__all__ = [
    "SynthConfig",
    "ClassSynthConfig",
    "generate_regression_data",
    "generate_classification_data",
    "one_hot_assignments",
    "rmse",
    "dataset_rmse",
    "benchmark_fit_config",
    "run_regression_benchmark",
    "run_classification_benchmark",
]


@dataclass(frozen=True)
class SynthConfig:
    """Regression generator settings (original-unit kernel denominators)."""

    n_tasks: int = 50
    n_groups: int = 3
    samples_per_task: int = 5
    n_grid: int = 100
    domain_half_width: float = 50.0
    group_amplitude: float = 1.0
    group_s_den: float = 25.0
    indiv_amplitude: float = 0.2
    indiv_s_den: float = 16.0
    noise_var: float = 0.01
    seed: int = 0

    @property
    def period(self) -> float:
        """Original-unit length of one full cycle of the internal circle."""
        w = 2.0 * self.domain_half_width
        return w * self.n_grid / (self.n_grid - 1)

    @property
    def group_s_den_internal(self) -> float:
        return self.group_s_den / self.period**2

    @property
    def indiv_s_den_internal(self) -> float:
        return self.indiv_s_den / self.period**2

    def group_kernel_internal(self) -> RbfParams:
        return RbfParams(self.group_amplitude, self.group_s_den_internal)

    def indiv_kernel_internal(self) -> RbfParams:
        return RbfParams(self.indiv_amplitude, self.indiv_s_den_internal)


def generate_regression_data(config: SynthConfig) -> tuple[Dataset, dict]:
    """Sample one regression dataset plus its ground truth.

    The truth dict holds the group curves on the grid, per-task group
    assignments, each task's noiseless curve on the full grid, and both
    the internal and original grid positions.
    """
    rng = np.random.default_rng(config.seed)
    g = config.n_grid
    grid_orig = np.linspace(
        -config.domain_half_width, config.domain_half_width, g
    )
    internal = np.arange(g) / g

    d2 = (grid_orig[:, None] - grid_orig[None, :]) ** 2
    k_group = config.group_amplitude * np.exp(-d2 / config.group_s_den)
    k_indiv = config.indiv_amplitude * np.exp(-d2 / config.indiv_s_den)
    chol_g, _ = robust_cholesky(k_group)
    chol_i, _ = robust_cholesky(k_indiv)

    curves = (chol_g @ rng.standard_normal((g, config.n_groups))).T

    tasks = []
    assignments = np.empty(config.n_tasks, dtype=np.intp)
    task_truth = np.empty((config.n_tasks, g))
    for j in range(config.n_tasks):
        z = int(rng.integers(config.n_groups))
        sel = np.sort(rng.choice(g, size=config.samples_per_task, replace=False))
        indiv = chol_i @ rng.standard_normal(g)
        noise = np.sqrt(config.noise_var) * rng.standard_normal(sel.size)
        full = curves[z] + indiv
        assignments[j] = z
        task_truth[j] = full
        tasks.append(
            TaskSeries(
                task_id=f"task{j:03d}",
                times=internal[sel],
                values=full[sel] + noise,
                label=str(z),
            )
        )
    dataset = Dataset(
        tasks=tuple(tasks), period=config.period, snap_resolution=g
    )
    truth = {
        "curves": curves,
        "assignments": assignments,
        "task_truth": task_truth,
        "grid_internal": internal,
        "grid_original": grid_orig,
    }
    return dataset, truth


@dataclass(frozen=True)
class ClassSynthConfig:
    """Classification generator settings on the unit interval."""

    n_classes: int = 3
    n_grid: int = 100
    samples_per_task: int = 15
    n_train_per_class: int = 100
    n_test_per_class: int = 100
    group_amplitude: float = 1.0
    group_s_den: float = 0.04
    indiv_amplitude: float = 0.2
    indiv_s_den: float = 0.0256
    noise_var: float = 0.01
    max_xcorr: float = 0.85
    seed: int = 0


def _periodic_rbf(delta: np.ndarray, s_den: float) -> np.ndarray:
    """Unit-period stationary correlation with RBF curvature at small lags.

    ``exp(-4 sin^2(pi d) / (4 pi^2 s_den))`` is positive definite on the
    circle (it is the plane RBF of the embedded angle), unlike the RBF of
    the wrapped distance, and agrees with ``exp(-d^2/s_den)`` to second
    order at d = 0.
    """
    return np.exp(-np.sin(np.pi * delta) ** 2 / (np.pi**2 * s_den))


def _max_pairwise_xcorr(curves: np.ndarray) -> float:
    """Largest circular cross-correlation between standardized curve pairs."""
    centered = curves - curves.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(centered, axis=1)
    top = 0.0
    n = curves.shape[1]
    for a in range(curves.shape[0]):
        for b in range(a + 1, curves.shape[0]):
            corr = np.fft.irfft(
                np.conj(np.fft.rfft(centered[a])) * np.fft.rfft(centered[b]), n=n
            )
            top = max(top, float(corr.max() / (norms[a] * norms[b])))
    return top


def generate_classification_data(
    config: ClassSynthConfig,
) -> tuple[Dataset, Dataset, dict]:
    """Labeled, phase-shifted train and test sets with distinct class shapes.

    Class curves are redrawn (up to 200 times) until every standardized
    pairwise circular cross-correlation is at most ``max_xcorr``, so the
    classes cannot collide under the model's shift invariance.
    """
    rng = np.random.default_rng(config.seed)
    g = config.n_grid
    internal = np.arange(g) / g
    k_group = config.group_amplitude * _periodic_rbf(
        internal[:, None] - internal[None, :], config.group_s_den
    )
    chol_g, _ = robust_cholesky(k_group)

    curves = None
    for _ in range(200):
        draw = (chol_g @ rng.standard_normal((g, config.n_classes))).T
        if _max_pairwise_xcorr(draw) <= config.max_xcorr:
            curves = draw
            break
    if curves is None:
        raise RuntimeError("could not draw sufficiently distinct class curves")

    def make_tasks(prefix: str, per_class: int) -> list[TaskSeries]:
        out = []
        for c in range(config.n_classes):
            for i in range(per_class):
                steps = int(rng.integers(g))
                sel = np.sort(rng.choice(g, size=config.samples_per_task, replace=False))
                shifted = curves[c][(sel - steps) % g]
                pts = internal[sel]
                k_i = config.indiv_amplitude * _periodic_rbf(
                    pts[:, None] - pts[None, :], config.indiv_s_den
                )
                chol_i, _ = robust_cholesky(k_i)
                indiv = chol_i @ rng.standard_normal(sel.size)
                noise = np.sqrt(config.noise_var) * rng.standard_normal(sel.size)
                out.append(
                    TaskSeries(
                        task_id=f"{prefix}{c}_{i:03d}",
                        times=pts,
                        values=shifted + indiv + noise,
                        label=f"c{c}",
                    )
                )
        return out

    train = Dataset(
        tasks=tuple(make_tasks("tr", config.n_train_per_class)),
        period=1.0,
        snap_resolution=g,
    )
    test = Dataset(
        tasks=tuple(make_tasks("te", config.n_test_per_class)),
        period=1.0,
        snap_resolution=g,
    )
    info = {"curves": curves, "grid_internal": internal}
    return train, test, info


def one_hot_assignments(assignments: np.ndarray, k: int) -> np.ndarray:
    """Ground-truth responsibilities for the clamped (CGMT) fit."""
    assignments = np.asarray(assignments, dtype=np.intp)
    out = np.zeros((assignments.size, k))
    out[np.arange(assignments.size), assignments] = 1.0
    return out


def rmse(predicted: np.ndarray, truth: np.ndarray) -> float:
    """Root mean squared error between two curves."""
    predicted = np.asarray(predicted, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if predicted.shape != truth.shape:
        raise ValueError("shape mismatch")
    return float(np.sqrt(np.mean((predicted - truth) ** 2)))


def dataset_rmse(per_task: list[float]) -> float:
    """Dataset score: mean of the per-task RMSEs."""
    if not per_task:
        raise ValueError("no per-task scores")
    return float(np.mean(per_task))


def benchmark_fit_config(
    synth: SynthConfig,
    seed: int,
    restarts: int = 2,
    max_iter: int = 60,
    tol: float = 1e-4,
) -> FitConfig:
    """Fit settings for the regression protocol: known group kernel, no shifts."""
    return FitConfig(
        n_clusters=synth.n_groups,
        restarts=restarts,
        tol=tol,
        max_iter=max_iter,
        seed=seed,
        shift_grid_size=1,
        kernel_mode="rbf",
        group_kernel=synth.group_kernel_internal(),
        init_kernel=RbfParams(0.5, synth.group_s_den_internal),
    )


def _model_rmse(model: GmtModel, dataset: Dataset, truth: dict) -> float:
    query = truth["grid_internal"] * model.period
    state = e_step(model, dataset)
    scores = [
        rmse(
            predict_task(model, dataset, j, query, estep=state),
            truth["task_truth"][j],
        )
        for j in range(dataset.n_tasks)
    ]
    return dataset_rmse(scores)


def _st_rmse(dataset: Dataset, truth: dict, synth: SynthConfig) -> float:
    params = RbfParams(
        synth.group_amplitude + synth.indiv_amplitude, synth.group_s_den_internal
    )
    query = truth["grid_internal"] * dataset.period
    scores = []
    for j, task in enumerate(dataset.tasks):
        reg = fit_single_task(task, params, synth.noise_var, period=dataset.period)
        scores.append(rmse(reg.predict(query), truth["task_truth"][j]))
    return dataset_rmse(scores)


def run_regression_benchmark(
    n_values: tuple[int, ...] = (5,),
    n_trials: int = 10,
    methods: tuple[str, ...] = ("st", "scmt", "gmt", "dp", "cgmt"),
    seed: int = 0,
    synth: SynthConfig | None = None,
    restarts: int = 2,
    max_iter: int = 60,
    tol: float = 1e-4,
    truncation: int = 10,
    concentration: float = 1.0,
) -> dict:
    """Dataset RMSE per method over fresh datasets for each (N, trial).

    Returns a JSON-ready table: ``rmse[method][str(N)]`` is the per-trial
    list of dataset RMSEs.  The clamped method ("cgmt") fixes
    responsibilities at the generator's assignments.
    """
    known = {"st", "scmt", "gmt", "dp", "cgmt"}
    bad = set(methods) - known
    if bad:
        raise ValueError(f"unknown methods: {sorted(bad)}")
    base = synth or SynthConfig()
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(n_values) * n_trials)
    table: dict[str, dict[str, list[float]]] = {m: {} for m in methods}
    for a, n in enumerate(n_values):
        for m in methods:
            table[m][str(n)] = []
        for trial in range(n_trials):
            child = children[a * n_trials + trial]
            data_seed, fit_seed = (int(v) for v in child.generate_state(2))
            cfg_synth = replace(base, samples_per_task=n, seed=data_seed)
            dataset, truth = generate_regression_data(cfg_synth)
            base_fit = benchmark_fit_config(
                cfg_synth, fit_seed, restarts=restarts, max_iter=max_iter, tol=tol
            )
            for m in methods:
                if m == "st":
                    score = _st_rmse(dataset, truth, cfg_synth)
                elif m == "scmt":
                    model, _ = fit(dataset, replace(base_fit, n_clusters=1))
                    score = _model_rmse(model, dataset, truth)
                elif m == "gmt":
                    model, _ = fit(dataset, base_fit)
                    score = _model_rmse(model, dataset, truth)
                elif m == "cgmt":
                    clamp = one_hot_assignments(
                        truth["assignments"], cfg_synth.n_groups
                    )
                    model, _ = fit(dataset, replace(base_fit, fixed_resp=clamp))
                    score = _model_rmse(model, dataset, truth)
                else:  # dp
                    dp_cfg = DpConfig(
                        n_clusters=truncation,
                        restarts=restarts,
                        tol=tol,
                        max_iter=max_iter,
                        seed=fit_seed,
                        shift_grid_size=1,
                        kernel_mode="rbf",
                        group_kernel=cfg_synth.group_kernel_internal(),
                        init_kernel=base_fit.init_kernel,
                        truncation=truncation,
                        concentration=concentration,
                    )
                    model, _ = fit_dp(dataset, dp_cfg)
                    score = _model_rmse(model, dataset, truth)
                table[m][str(n)].append(float(score))
    return {
        "n_values": [int(n) for n in n_values],
        "n_trials": int(n_trials),
        "methods": list(methods),
        "seed": int(seed),
        "rmse": table,
    }


def run_classification_benchmark(
    seed: int = 0,
    n_seeds: int = 1,
    discovery: bool = True,
    k_discovery: int = 9,
    restarts: int = 2,
    max_iter: int = 60,
    tol: float = 1e-4,
    synth: ClassSynthConfig | None = None,
) -> dict:
    """Classification and class-discovery accuracies over fresh datasets.

    Per repetition: generate a labeled benchmark, fit single-cluster
    per-label models, score the test split, and optionally run discovery
    on the unlabeled union with ``k_discovery`` clusters.
    """
    base = synth or ClassSynthConfig()
    children = np.random.SeedSequence(seed).spawn(n_seeds)
    runs = []
    for i, child in enumerate(children):
        data_seed, fit_seed = (int(v) for v in child.generate_state(2))
        cfg = replace(base, seed=data_seed)
        train, test, _ = generate_classification_data(cfg)
        clf_config = FitConfig(
            n_clusters=1,
            restarts=restarts,
            tol=tol,
            max_iter=max_iter,
            seed=fit_seed,
            shift_grid_size=cfg.n_grid,
            kernel_mode="rbf",
            group_kernel=RbfParams(cfg.group_amplitude, cfg.group_s_den),
            init_kernel=RbfParams(cfg.indiv_amplitude, cfg.indiv_s_den),
        )
        bundle, _ = fit_classifier(train, clf_config)
        predicted = classify_dataset(bundle, test)
        truth = test.labels()
        hits = sum(p == t for p, t in zip(predicted, truth))
        entry: dict = {
            "seed": int(i),
            "classify_accuracy": hits / len(predicted),
        }
        if discovery:
            disc_config = replace(clf_config, n_clusters=k_discovery)
            result = class_discovery(train, test, disc_config)
            entry["discovery_accuracy"] = result["accuracy"]
        runs.append(entry)
    out = {
        "seed": int(seed),
        "n_seeds": int(n_seeds),
        "runs": runs,
        "classify_accuracy_median": float(
            np.median([r["classify_accuracy"] for r in runs])
        ),
    }
    if discovery:
        out["discovery_accuracy_median"] = float(
            np.median([r["discovery_accuracy"] for r in runs])
        )
    return out
