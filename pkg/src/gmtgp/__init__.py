"""Grouped mixed-effect Gaussian-process mixtures with phase shifts.

Periodic series that share cluster-level shapes up to circular phase
shifts, each with its own GP deviation: EM fitting, a stick-breaking
variational variant, per-task regression, generative classification,
class discovery, and BIC model-order selection.
"""

from .data import (
    Dataset,
    DistinctGrid,
    TaskSeries,
    build_distinct_grid,
    normalize_series,
    snap_to_grid,
)
from .dp import (
    DpConfig,
    DpModel,
    elbo_surrogate,
    expected_log_sticks,
    fit_dp,
    occupied_components,
    stick_breaking_weights,
    stick_log_prior,
    update_beta_params,
    variational_e_step,
)
from .em import (
    EStepState,
    FitConfig,
    GmtModel,
    GroupEffect,
    MonotonicityError,
    e_step,
    fit,
    fit_group_effect,
    penalized_objective,
    update_mixture,
    update_noise,
)
from .estimators import (
    DirichletGPMixture,
    GroupedGPMixture,
    PeriodicSeriesClassifier,
    as_dataset,
)
from .gp import log_marginal, posterior_moments, predictive
from .inference import (
    ClassifierBundle,
    SingleTaskGp,
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
from .io import export_csv, ingest_csv
from .kernels import (
    FixedKernel,
    RbfKernel,
    RbfParams,
    empirical_kernel_update,
    kernel_grad,
    optimize_kernel_params,
    q2_value_and_grad,
    rbf,
)
from .linalg import NumericalError, robust_cholesky, robust_cholesky_batch
from .serialization import (
    deserialize_classifier,
    deserialize_model,
    load_classifier,
    load_model,
    save_classifier,
    save_model,
    serialize_classifier,
    serialize_model,
)
from .shifts import (
    ShiftGrid,
    best_shift_brute,
    best_shift_fft,
    circular_shift,
    shifted_kernel_section,
)
from .synthetic import (
    ClassSynthConfig,
    SynthConfig,
    dataset_rmse,
    generate_classification_data,
    generate_regression_data,
    one_hot_assignments,
    rmse,
    run_classification_benchmark,
    run_regression_benchmark,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # data
    "TaskSeries",
    "Dataset",
    "DistinctGrid",
    "build_distinct_grid",
    "snap_to_grid",
    "normalize_series",
    # kernels and linear algebra
    "RbfParams",
    "RbfKernel",
    "FixedKernel",
    "rbf",
    "kernel_grad",
    "q2_value_and_grad",
    "optimize_kernel_params",
    "empirical_kernel_update",
    "NumericalError",
    "robust_cholesky",
    "robust_cholesky_batch",
    # gp
    "posterior_moments",
    "log_marginal",
    "predictive",
    # shifts
    "ShiftGrid",
    "circular_shift",
    "shifted_kernel_section",
    "best_shift_brute",
    "best_shift_fft",
    # em
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
    # dp
    "DpConfig",
    "DpModel",
    "expected_log_sticks",
    "stick_log_prior",
    "stick_breaking_weights",
    "update_beta_params",
    "variational_e_step",
    "elbo_surrogate",
    "occupied_components",
    "fit_dp",
    # inference
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
    # synthetic benchmarks
    "SynthConfig",
    "ClassSynthConfig",
    "generate_regression_data",
    "generate_classification_data",
    "one_hot_assignments",
    "rmse",
    "dataset_rmse",
    "run_regression_benchmark",
    "run_classification_benchmark",
    # io and serialization
    "ingest_csv",
    "export_csv",
    "serialize_model",
    "deserialize_model",
    "serialize_classifier",
    "deserialize_classifier",
    "save_model",
    "load_model",
    "save_classifier",
    "load_classifier",
    # estimators
    "as_dataset",
    "GroupedGPMixture",
    "DirichletGPMixture",
    "PeriodicSeriesClassifier",
]
