"""Influence-function Bayesian bootstrap prediction with tuned Dirichlet concentration."""

from .baselines import DropoutConfig, dropout_ensemble, masked_forward
from .benchmarks import (
    BenchmarkFunction,
    BenchmarkResult,
    ExperimentConfig,
    FUNCTIONS,
    SuiteResult,
    default_config,
    default_suite,
    evaluate_function,
    generate_dataset,
    get_function,
    run_benchmark,
    run_suite,
)
from .bootstrap import (
    InfluencePack,
    WeightVector,
    influence_pack,
    linearized_prediction,
    perturb_parameters,
    retrain_oracle,
    sample_dirichlet,
)
from .calibration import (
    AlphaGrid,
    CalibrationResult,
    ConsistencyRow,
    consistency_diagnostic,
    tune_alpha,
)
from .data import Dataset, Standardizer
from .errors import (
    ConfbbError,
    ConvergenceFailure,
    DomainError,
    IllConditioned,
    InvalidParameter,
    ShapeError,
    SingularFit,
    UnsupportedModel,
)
from .models import (
    FittedModel,
    HessianApprox,
    ModelSpec,
    ParameterVector,
    compute_hessian,
    fit_erm,
    influence_solve,
    predict,
    prediction_gradient,
)
from .predictive import (
    PredictionInterval,
    PredictiveEnsemble,
    average_log_score,
    build_ensemble,
    empirical_coverage,
    interval,
    log_score,
)

__version__ = "0.1.0"
