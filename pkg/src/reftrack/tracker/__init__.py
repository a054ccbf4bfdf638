"""Prompt-conditioned multi-object tracker."""

from .config import (
    REFER_HEADS, SGM_MODES, TEXT_SPACES, TrackerConfig, TrackerConfigError,
)
from .text import FrozenTextEmbedder, TrainableTextEmbedder, VocabularyError
from .model import ReferHead, SemanticGuidance, TrackerModel, cosine_rows
from .assign import MatchResult, assign_targets, detection_cost
from .runtime import (
    FramePrediction, Track, TrackState, denormalize_box, step, track_video,
)
from .train import (
    TrainLog, feature_layout, featurize_video, load_model, model_arrays,
    model_from_arrays, normalized_gt, save_model, train,
)

__all__ = [
    "REFER_HEADS", "SGM_MODES", "TEXT_SPACES",
    "TrackerConfig", "TrackerConfigError",
    "FrozenTextEmbedder", "TrainableTextEmbedder", "VocabularyError",
    "ReferHead", "SemanticGuidance", "TrackerModel", "cosine_rows",
    "MatchResult", "assign_targets", "detection_cost",
    "FramePrediction", "Track", "TrackState", "denormalize_box", "step",
    "track_video",
    "TrainLog", "feature_layout", "featurize_video", "load_model",
    "model_arrays", "model_from_arrays", "normalized_gt", "save_model",
    "train",
]
