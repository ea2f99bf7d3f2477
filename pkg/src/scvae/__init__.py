"""Sparse-coding variational autoencoder with unrolled ISTA and a fixed DCT dictionary."""

from .dictionary import Dictionary, build_dct_dictionary, estimate_lipschitz
from .errors import ConfigError, DimensionError, DomainError, FormatError, NumericalError, ScvaeError
from .model import SCVAE, LossReport, ModelConfig
from .solvers import SparseCode, SparseProblem, fista_solve, ista_solve, lista_forward, lista_init_from_dictionary
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

__all__ = [
    "SCVAE", "ConfigError", "DimensionError", "Dictionary", "DomainError", "FormatError", "LossReport",
    "ModelConfig", "NumericalError", "ScvaeError", "SparseCode", "SparseProblem", "TrainConfig",
    "build_dct_dictionary", "estimate_lipschitz", "fista_solve", "ista_solve", "lista_forward",
    "lista_init_from_dictionary", "load_checkpoint", "save_checkpoint", "train",
]
