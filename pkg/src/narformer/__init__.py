"""Neural architecture representation learning: tokenizer, transformer predictor,
augmentation, training and predictor-guided search on a numpy autodiff core."""

from .arch_graph import ArchGraph, OpVocab, canonical_hash, load_arch, parse_arch, relabel
from .model import ModelConfig
from .tokenizer import EncoderSpec, tokenize
from .trainer import Predictor, TrainConfig, evaluate, fit

__version__ = "0.1.0"

__all__ = [
    "ArchGraph",
    "EncoderSpec",
    "ModelConfig",
    "OpVocab",
    "Predictor",
    "TrainConfig",
    "canonical_hash",
    "evaluate",
    "fit",
    "load_arch",
    "parse_arch",
    "relabel",
    "tokenize",
]
