"""Pre-density estimation in a Sobolev RKHS with sampled frequencies.

The estimator fits f = sum_i alpha_i k(x_i, .) by minimizing
-(1/N) sum_i log f(x_i)^2 + ||f||_K^2 and reports f^2 as an unnormalized
density.  The kernel is the inverse of a symmetric differential operator,
evaluated through trigonometric random features; optimization uses a
kernel-scale-covariant (natural) gradient that preserves positivity of f on
the training set, and the smoothness parameter is selected by a Fisher
divergence estimated with Hutchinson probes.
"""

from .baseline_kernels import (
    ClosedFormKernel,
    eval_kernel,
    kde_density,
    kernel_gradient_closed_form,
    kernel_matrix_closed_form,
)
from .errors import (
    AllCandidatesFailed,
    DataError,
    NumericsError,
    SolverDivergence,
    SosrepError,
    ValidationError,
    VanishingDensity,
)
from .harness import (
    AD_METHODS,
    AdConfig,
    Dataset,
    ExperimentReport,
    SmoothBumpDensity,
    auc_roc,
    consistency_experiment,
    duplicate_anomalies,
    load_csv,
    negative_fraction_experiment,
    rank_aggregate,
    run_ad,
    split,
    standardize,
)
from .score_fd import (
    FdEntry,
    FdOptions,
    FdProfile,
    FdStat,
    fd_statistic,
    hutchinson_trace,
    profile_from_csv,
    profile_to_csv,
    score,
    score_jacobian_trace,
    stable_minimum,
    tune,
)
from .sdo_kernel import (
    FrequencySample,
    RadialGrid,
    SdoParams,
    build_radial_grid,
    closed_form_kernel_1d,
    feature_map,
    frequency_sample_from_json,
    frequency_sample_to_json,
    kernel_matrix,
    numeric_kernel_1d,
    radial_density,
    rescale_frequencies,
    sample_frequencies,
    sample_radii,
    spectral_mass,
    sphere_area,
)
from .solver import (
    FitResult,
    FittedModel,
    SolverOptions,
    add_jitter,
    evaluate_density,
    fit,
    fit_model,
    grad_natural,
    grad_standard,
    model_from_json,
    model_to_json,
    natural_step,
    objective,
    rkhs_norm_sq,
)
from .two_block import (
    BlockSpec,
    TwoBlockSolution,
    build_block_kernel,
    exact_system_coefficients,
    kde_ratio,
    solve_two_block,
    sosrep_block_ratio,
    verify_against_solver,
)

__version__ = "0.1.0"

__all__ = [
    "AD_METHODS",
    "AdConfig",
    "AllCandidatesFailed",
    "BlockSpec",
    "ClosedFormKernel",
    "DataError",
    "Dataset",
    "ExperimentReport",
    "FdEntry",
    "FdOptions",
    "FdProfile",
    "FdStat",
    "FitResult",
    "FittedModel",
    "FrequencySample",
    "NumericsError",
    "RadialGrid",
    "SdoParams",
    "SmoothBumpDensity",
    "SolverDivergence",
    "SolverOptions",
    "SosrepError",
    "TwoBlockSolution",
    "ValidationError",
    "VanishingDensity",
    "add_jitter",
    "auc_roc",
    "build_block_kernel",
    "build_radial_grid",
    "closed_form_kernel_1d",
    "consistency_experiment",
    "duplicate_anomalies",
    "eval_kernel",
    "evaluate_density",
    "exact_system_coefficients",
    "fd_statistic",
    "feature_map",
    "fit",
    "fit_model",
    "frequency_sample_from_json",
    "frequency_sample_to_json",
    "grad_natural",
    "grad_standard",
    "hutchinson_trace",
    "kde_density",
    "kde_ratio",
    "kernel_gradient_closed_form",
    "kernel_matrix",
    "kernel_matrix_closed_form",
    "load_csv",
    "model_from_json",
    "model_to_json",
    "natural_step",
    "negative_fraction_experiment",
    "numeric_kernel_1d",
    "objective",
    "profile_from_csv",
    "profile_to_csv",
    "radial_density",
    "rank_aggregate",
    "rescale_frequencies",
    "rkhs_norm_sq",
    "run_ad",
    "sample_frequencies",
    "sample_radii",
    "score",
    "score_jacobian_trace",
    "solve_two_block",
    "sosrep_block_ratio",
    "spectral_mass",
    "sphere_area",
    "split",
    "stable_minimum",
    "standardize",
    "tune",
    "verify_against_solver",
]
