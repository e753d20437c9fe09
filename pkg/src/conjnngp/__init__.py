"""Conjugate Bayesian multivariate spatial regression with NNGP kernels.

Exact (sampling-based but MCMC-free) posterior inference for two model
kinds: a response model whose kernel folds the nugget into the marginal
covariance, and a latent model that recovers spatial random effects through
a sparse augmented least-squares system solved by LSMR.
"""

__version__ = "0.1.0"

from .crossval import CVGrid, CVResult, cv_score, grid_search, make_folds
from .dataset import Dataset
from .errors import (ConvergenceError, DecompositionError, DuplicateCoordinateError,
                     ModelError, ValidationError)
from .estimators import LatentNNGP, ResponseNNGP
from .latent import (AugmentedSystem, LatentPosterior, assemble_augmented,
                     fit_latent, predict_latent, sample_latent_posterior)
from .metrics import (FrobeniusReport, MetricsReport, ScorePair, ToyCovarianceTriple,
                      coverage, frobenius_shrink_check, kl_gaussian_zero_mean,
                      mcrps, msel, rmspe, score_predictions, toy_covariances)
from .response import (MNIWPosterior, PredictionSummary, PriorSpec, SampleSet,
                       fit_response, predict_response, sample_response_posterior)
from .simulate import SimConfig, SimOutput, generate
from .sparse import LsmrOptions, LsmrReport, lsmr, spmv
from .spatial import (CorrelationModel, LocationSet, NeighborGraph,
                      build_prediction_neighbors, build_training_neighbors,
                      corr_matrix, correlation, order_locations)
from .vecchia import (PredictionWeights, VecchiaFactor, apply_vrho, build_factor,
                      build_factor_from_matrix, build_prediction_weights)

__all__ = [
    "AugmentedSystem", "ConvergenceError", "CorrelationModel", "CVGrid", "CVResult",
    "Dataset", "DecompositionError", "DuplicateCoordinateError", "FrobeniusReport",
    "LatentNNGP", "LatentPosterior", "LocationSet", "LsmrOptions", "LsmrReport",
    "MetricsReport", "MNIWPosterior", "ModelError", "NeighborGraph",
    "PredictionSummary", "PredictionWeights", "PriorSpec", "ResponseNNGP",
    "SampleSet", "ScorePair", "SimConfig", "SimOutput", "ToyCovarianceTriple",
    "ValidationError", "VecchiaFactor", "apply_vrho", "assemble_augmented",
    "build_factor", "build_factor_from_matrix", "build_prediction_neighbors",
    "build_prediction_weights", "build_training_neighbors", "corr_matrix",
    "correlation", "coverage", "cv_score", "fit_latent", "fit_response",
    "frobenius_shrink_check", "generate", "grid_search", "kl_gaussian_zero_mean",
    "lsmr", "make_folds", "mcrps", "msel", "order_locations", "predict_latent",
    "predict_response", "rmspe", "sample_latent_posterior",
    "sample_response_posterior", "score_predictions", "spmv", "toy_covariances",
]
