"""Multi-level knowledge-guided referring camouflaged object segmentation.

Desk-scale, backend-pluggable pipeline: prompt-driven knowledge generation
and caching, frozen text encoding, knowledge fusion/injection, a promptable
toy segmentation model with low-rank adapter fine-tuning, training, and the
standard four-metric evaluation.
"""

__version__ = "0.1.0"

from .encoding import EncodedKnowledge, encode_bundle, encode_text
from .injector import KnowledgeInjector, SceneWeights, compute_scene_weights
from .knowledge import KnowledgeBundle, KnowledgeCache, generate_bundle
from .metrics import MetricsReport, e_measure_adaptive, evaluate_dataset, mae, s_measure, weighted_f_beta
from .model import MaskPrediction, Segmenter
from .prompts import TEMPLATES, render_prompt
from .training import TrainConfig, bce_loss, cosine_lr, train

__all__ = [
    "EncodedKnowledge",
    "KnowledgeBundle",
    "KnowledgeCache",
    "KnowledgeInjector",
    "MaskPrediction",
    "MetricsReport",
    "SceneWeights",
    "Segmenter",
    "TEMPLATES",
    "TrainConfig",
    "bce_loss",
    "compute_scene_weights",
    "cosine_lr",
    "e_measure_adaptive",
    "encode_bundle",
    "encode_text",
    "evaluate_dataset",
    "generate_bundle",
    "mae",
    "render_prompt",
    "s_measure",
    "train",
    "weighted_f_beta",
]
