"""Gaussian embeddings of discrete-time dynamic graphs.

Models: a GCN + transformer baseline (``st-transformerg2g``) and selective
state-space encoders with (``gdg-mamba``) or without (``dg-mamba``) a GINE
convolution in front.  Everything runs on a small numpy autodiff engine.
"""

from .errors import (
    ConfigurationError,
    ContractError,
    DataError,
    DgembedError,
    DimensionError,
    ParseError,
    SamplingError,
    TrainingError,
)
from .graph import TemporalGraph, generate_sbm, load_bundle, load_edge_list, save_bundle
from .models import ModelConfig, build_model, kl_divergence, published_config, triplet_loss
from .training import embed_all, fit, load_checkpoint, save_checkpoint
from .evaluation import evaluate

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "ContractError",
    "DataError",
    "DgembedError",
    "DimensionError",
    "ModelConfig",
    "ParseError",
    "SamplingError",
    "TemporalGraph",
    "TrainingError",
    "build_model",
    "embed_all",
    "evaluate",
    "fit",
    "generate_sbm",
    "kl_divergence",
    "load_bundle",
    "load_checkpoint",
    "load_edge_list",
    "published_config",
    "save_bundle",
    "save_checkpoint",
    "triplet_loss",
]
