"""Video temporal grounding with a global text anchor.

A desk-scale, fully testable grounding model: gated cross-attention over
pre-extracted video/text features, alignment losses, set-prediction moment
decoding, saliency scoring, and the training/evaluation harness around them.
"""

from .config import RunConfig, load_config, save_config
from .core import (
    Batch,
    FeatureSequence,
    GroundingSample,
    Moment,
    MomentPredictionSet,
    RelevanceLabels,
    SaliencyVector,
    center_width_to_span,
    collate,
    span_to_center_width,
)
from .data import DatasetManifest, SyntheticConfig, generate_synthetic
from .losses import LossWeights
from .metrics import HDResult, MRResult, evaluate_highlights, evaluate_moments
from .model import GroundingModel, ModelOutput

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "DatasetManifest",
    "FeatureSequence",
    "GroundingModel",
    "GroundingSample",
    "HDResult",
    "LossWeights",
    "MRResult",
    "ModelOutput",
    "Moment",
    "MomentPredictionSet",
    "RelevanceLabels",
    "RunConfig",
    "SaliencyVector",
    "SyntheticConfig",
    "center_width_to_span",
    "collate",
    "evaluate_highlights",
    "evaluate_moments",
    "generate_synthetic",
    "load_config",
    "save_config",
    "span_to_center_width",
    "__version__",
]
