"""Decaying-step SGD, its diffusion limit, and coupled error diagnostics."""

from .analysis import (
    Estimate,
    RateEstimate,
    RateSetting,
    confidence_interval,
    drift_sup_bound,
    drift_sup_verify,
    expected_rate,
    fit_rate,
    probe_exact_second_moment,
    probe_strong_error_floor,
)
from .core import RngStream, StepSchedule, derive_stream, log_spaced_indices
from .coupling import (
    CoupledBank,
    CoupledRun,
    epsilon_hat,
    resolve_kind,
    run_coupled,
    run_coupled_replicates,
    strong_error,
    w2_1d,
    weak_error,
)
from .noise import (
    DataDistribution,
    GradientOracle,
    batch_oracle,
    empirical_data,
    empirical_sigma,
    gaussian_oracle,
    heavy_oracle,
    iid_data,
    least_squares_batch_oracle,
    probe_batch_oracle,
    psd_sqrt,
)
from .objectives import (
    CertificationReport,
    Convex,
    GridSpec,
    LeastSquaresObjective,
    Lojasiewicz,
    MixedDominance,
    Objective,
    QuasarConvex,
    SingularGramError,
    StronglyConvex,
    certify_condition,
    finite_difference_gradient,
    least_squares_from_data,
    make_least_squares,
    make_linear_probe,
    make_phi_p,
    make_pl_sine,
    make_quadratic,
)
from .sde import (
    BrownianPath,
    em_bias_probe,
    path_length,
    run_gradient_flow,
    run_sde_em,
    run_sde_em_replicates,
    sample_brownian_path,
)
from .sgd import (
    DivergenceError,
    ReplicateRuns,
    Trajectory,
    run_projected_sgd,
    run_sgd,
    run_sgd_replicates,
    suffix_average,
)

__version__ = "0.1.0"

__all__ = [
    "batch_oracle",
    "BrownianPath",
    "CertificationReport",
    "certify_condition",
    "confidence_interval",
    "Convex",
    "CoupledBank",
    "CoupledRun",
    "DataDistribution",
    "derive_stream",
    "DivergenceError",
    "drift_sup_bound",
    "drift_sup_verify",
    "em_bias_probe",
    "empirical_data",
    "empirical_sigma",
    "epsilon_hat",
    "Estimate",
    "expected_rate",
    "finite_difference_gradient",
    "fit_rate",
    "gaussian_oracle",
    "GradientOracle",
    "GridSpec",
    "heavy_oracle",
    "iid_data",
    "least_squares_batch_oracle",
    "least_squares_from_data",
    "LeastSquaresObjective",
    "log_spaced_indices",
    "Lojasiewicz",
    "make_least_squares",
    "make_linear_probe",
    "make_phi_p",
    "make_pl_sine",
    "make_quadratic",
    "MixedDominance",
    "Objective",
    "path_length",
    "probe_batch_oracle",
    "probe_exact_second_moment",
    "probe_strong_error_floor",
    "psd_sqrt",
    "QuasarConvex",
    "RateEstimate",
    "RateSetting",
    "ReplicateRuns",
    "resolve_kind",
    "RngStream",
    "run_coupled",
    "run_coupled_replicates",
    "run_gradient_flow",
    "run_projected_sgd",
    "run_sde_em",
    "run_sde_em_replicates",
    "run_sgd",
    "run_sgd_replicates",
    "sample_brownian_path",
    "SingularGramError",
    "StepSchedule",
    "strong_error",
    "StronglyConvex",
    "suffix_average",
    "Trajectory",
    "w2_1d",
    "weak_error",
]
