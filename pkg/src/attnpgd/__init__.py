"""Softmax self-attention on planted linear regression, trained the structure-aware way.

A numpy library for studying a single-layer softmax self-attention predictor
on data from a planted linear model: closed-form population landscape, the
manifold of global minima and projections onto it, spectral initialization,
preconditioned gradient descent, and the data/compute scaling behaviour of
the fresh-batch gradient oracle.
"""

from .linalg import SpdFactors, psd_sqrt, spd_factor
from .losses import (
    ConsistencyError,
    GradTheta,
    LossReport,
    OracleEstimate,
    empirical_gradient,
    empirical_loss,
    empirical_regularizer,
    expected_empirical_gradient,
    gradient_discrepancy,
    mc_population_loss,
    population_gradient,
    population_loss,
    population_objective,
    population_regularizer,
)
from .manifold import (
    AssumptionReport,
    LandscapeConstants,
    LandscapeReport,
    ManifoldBasis,
    ProjectionError,
    ProjectionResult,
    ProjectionTracker,
    assumption_check,
    build_basis,
    landscape_check,
    manifold_point,
    p_inner,
    p_norm,
    project,
)
from .model import (
    AttentionStats,
    Dataset,
    Dims,
    ProblemInstance,
    Theta,
    attention_moments,
    attention_weights,
    predict,
    random_theta,
    sample_dataset,
    sample_instance,
)
from .optimizer import (
    DivergenceError,
    OptConfig,
    TraceRecord,
    pgd_step,
    run,
    sgd_baseline,
    spectral_init,
    spectral_theta,
)
from .rng import spawn_seed, stream

__version__ = "0.1.0"

__all__ = [
    "AssumptionReport",
    "AttentionStats",
    "ConsistencyError",
    "Dataset",
    "Dims",
    "DivergenceError",
    "GradTheta",
    "LandscapeConstants",
    "LandscapeReport",
    "LossReport",
    "ManifoldBasis",
    "OptConfig",
    "OracleEstimate",
    "ProblemInstance",
    "ProjectionError",
    "ProjectionResult",
    "ProjectionTracker",
    "SpdFactors",
    "Theta",
    "TraceRecord",
    "assumption_check",
    "attention_moments",
    "attention_weights",
    "build_basis",
    "empirical_gradient",
    "empirical_loss",
    "empirical_regularizer",
    "expected_empirical_gradient",
    "gradient_discrepancy",
    "landscape_check",
    "manifold_point",
    "mc_population_loss",
    "p_inner",
    "p_norm",
    "pgd_step",
    "population_gradient",
    "population_loss",
    "population_objective",
    "population_regularizer",
    "predict",
    "project",
    "psd_sqrt",
    "random_theta",
    "run",
    "sample_dataset",
    "sample_instance",
    "sgd_baseline",
    "spawn_seed",
    "spd_factor",
    "spectral_init",
    "spectral_theta",
    "stream",
]
