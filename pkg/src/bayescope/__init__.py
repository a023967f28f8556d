"""Bayes-by-Backprop regression with epistemic / aleatoric uncertainty separation.

Built from scratch on numpy: a reverse-mode autodiff tape, reparameterized
dense and conv layers, the four model variants (cnn, cnn_sigma, bcnn,
bcnn_sigma), multi-pass inference, a synthetic saturating-maturity cohort
generator and the evaluation/CLI pipeline.
"""

from . import autodiff, evaluation, inference, layers, models, probability, synthdata, training
from .errors import (
    BayescopeError,
    ConfigError,
    ContractError,
    DimensionError,
    DivergedError,
    NumericDomainError,
)
from .inference import UncertaintyReport, predict, predict_batch
from .kernels import BACKEND as KERNEL_BACKEND
from .models import ModelSpec, build
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "autodiff", "evaluation", "inference", "layers", "models", "probability", "synthdata", "training",
    "BayescopeError", "ConfigError", "ContractError", "DimensionError", "DivergedError", "NumericDomainError",
    "UncertaintyReport", "predict", "predict_batch", "KERNEL_BACKEND", "ModelSpec", "build",
    "TrainConfig", "train",
]
