"""Signature representations learned by ranking lognormal-synthesised distortions.

Submodules: ``lognormal`` (stroke model and extraction), ``synthesis``,
``preprocess``, ``network``, ``ranking``, ``training``, ``verification``,
``datasets`` and ``cli``.
"""

from .datasets import Corpus, generate_virtual_corpus, load_corpus, parse_svc2004, save_corpus
from .kernels import BACKEND
from .lognormal import Component, ComponentParams, LognormalStroke, extract_parameters, reconstruct_component
from .preprocess import extract_signature, features, real_signature_features
from .ranking import RankingConfig, ap_gradient, ap_loss, infer_ydirect, infer_yw
from .signature import Signature, read_canonical, write_canonical
from .synthesis import G1, G2, SyntheticGroupSpec, build_pools, synthesize_signature
from .training import TrainConfig, Trainer, build_training_set
from .verification import TemplateSet, eer, evaluate, run_protocol, score

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Component", "ComponentParams", "Corpus", "G1", "G2", "LognormalStroke", "RankingConfig", "Signature",
    "SyntheticGroupSpec", "TemplateSet", "TrainConfig", "Trainer", "ap_gradient", "ap_loss", "build_pools",
    "build_training_set", "eer", "evaluate", "extract_parameters", "extract_signature", "features",
    "generate_virtual_corpus", "infer_ydirect", "infer_yw", "load_corpus", "parse_svc2004", "read_canonical",
    "real_signature_features", "reconstruct_component", "run_protocol", "save_corpus", "score",
    "synthesize_signature", "write_canonical",
]
