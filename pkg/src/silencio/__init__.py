"""Articulatory-to-acoustic conversion lab for silent speech.

Reconstructs acoustic features from silent articulatory sequences on
synthetic corpora with known ground truth: DTW-generated pseudo acoustic
targets, domain adversarial training through a gradient reversal marker,
and an iterative regenerate-and-retrain strategy, all measurable end to
end.
"""

__version__ = "0.1.0"

from .backend import backend_name
from .netblocks import Dims, ModelParams, init_params
from .synthcorpus import CorpusConfig, generate_corpus, load_corpus, save_corpus
from .trainer import TrainConfig, iterative_train, pretrain_vocalized

__all__ = [
    "__version__",
    "backend_name",
    "Dims",
    "ModelParams",
    "init_params",
    "CorpusConfig",
    "generate_corpus",
    "load_corpus",
    "save_corpus",
    "TrainConfig",
    "iterative_train",
    "pretrain_vocalized",
]
