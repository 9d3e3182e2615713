"""Few-shot keyword spotting with temporally structured embeddings and DTW."""

from .config import RunConfig, SAMPLE_RATE
from .dtw import Detection, Template, cost_matrix, detect, subsequence_dtw
from .embedder import EmbedderModel, TrainerConfig, train_frame_embedder
from .errors import KwspotError
from .evaluation import EventAnnotation, MetricsReport, match_events, micro_f1
from .frontend import AudioClip, Segment, SegmentationConfig, hfcc, logmel, \
    prepare_audio, segment_clip
from .labels import KeywordLabelSpace, active_interval, positional_label
from .loss import AdaptiveScale, angular_loss, angular_loss_gradients, \
    initial_scale, joint_softmax, similarity, update_scale

__version__ = "0.1.0"

__all__ = [
    "AdaptiveScale", "AudioClip", "Detection", "EmbedderModel",
    "EventAnnotation", "KeywordLabelSpace", "KwspotError", "MetricsReport",
    "RunConfig", "SAMPLE_RATE", "Segment", "SegmentationConfig", "Template",
    "TrainerConfig", "active_interval", "angular_loss",
    "angular_loss_gradients", "cost_matrix", "detect", "hfcc",
    "initial_scale", "joint_softmax", "logmel", "match_events", "micro_f1",
    "positional_label", "prepare_audio", "segment_clip", "similarity",
    "subsequence_dtw", "train_frame_embedder", "update_scale",
]
