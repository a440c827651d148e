"""Bayesian inference for stochastic compartment models with a Gaussian
(central-limit) likelihood built from the linear-noise moments of the
underlying Markov population process.
"""
from .errors import (DataError, EpicltError, EvidenceError, InitializationError, IntegrationError,
                     LikelihoodError, ModelError, OptimizationError, PriorError, SamplerError, SimulationError)
from .likelihood import ModelPosterior, ObservationSet, Problem, conditional_latent, log_likelihood
from .model import ModelSpec, initial_state, load_model, model_hash, save_model, validate_model
from .moments import compute_moments, integrate_covariance, integrate_mean, integrate_propagator
from .priors import PriorSpec

__version__ = "0.1.0"

__all__ = [
    "DataError", "EpicltError", "EvidenceError", "InitializationError", "IntegrationError", "LikelihoodError",
    "ModelError", "OptimizationError", "PriorError", "SamplerError", "SimulationError", "ModelPosterior",
    "ObservationSet", "Problem", "conditional_latent", "log_likelihood", "ModelSpec", "initial_state",
    "load_model", "model_hash", "save_model", "validate_model", "compute_moments", "integrate_covariance",
    "integrate_mean", "integrate_propagator", "PriorSpec", "__version__",
]
