"""Collaborative multi-output Gaussian process dynamical system.

A temporal GP prior drives latent coordinates; local processes (one per
weight column) and one global process map those coordinates to the outputs.
Training maximizes a sparse variational bound, optionally over random
dimension minibatches.  Trained models generate new sequences from time
stamps alone and reconstruct missing dimensions from partial observations.
"""

from .elbo import ElboBreakdown, elbo, elbo_gradients, elbo_minibatch
from .errors import (CgpdsError, ConditioningError, ConfigurationError,
                     DataError, NumericalError)
from .io import load_dataset, load_model, save_model
from .kernels import KernelParams, KernelSpec
from .latent_prior import TemporalGrid, VariationalLatentX
from .model import ModelState
from .predictor import (Metrics, PredictionMoments, PredictionRequest,
                        ReconstructionTask, generate, metrics, reconstruct)
from .synthetic import SyntheticDataset, sample_dataset
from .trainer import TrainConfig, TrainTrace, fit, initialize

__version__ = "0.1.0"

__all__ = [
    "CgpdsError", "ConditioningError", "ConfigurationError", "DataError",
    "NumericalError", "ElboBreakdown", "elbo", "elbo_gradients",
    "elbo_minibatch", "load_dataset", "load_model", "save_model",
    "KernelParams", "KernelSpec", "TemporalGrid", "VariationalLatentX",
    "ModelState", "Metrics", "PredictionMoments", "PredictionRequest",
    "ReconstructionTask", "generate", "metrics", "reconstruct",
    "SyntheticDataset", "sample_dataset", "TrainConfig", "TrainTrace",
    "fit", "initialize", "__version__",
]
