"""Multi-modal prediction of surgical-feedback effectiveness.

Pipeline: tube-masked video autoencoding, self-supervised fine-tuning
(task- or domain-relevant), supervised funnel-head training, and
frozen-encoder multi-modal fusion, evaluated with an AUROC-based multi-seed
protocol on a synthetic benchmark with controllable signal.
"""

__version__ = "0.1.0"

from .corpus import ClipRecord, SplitSpec, SyntheticSpec, synth_generate
from .evaluation import MetricsReport, ScoredInstance, auroc
from .pipeline import RunProfile, desk_profile, evaluate_modality, paper_profile, run_experiment
from .training import HeadConfig, TrainConfig
from .video_encoder import EncoderConfig, MaskPlan, VideoAutoencoder, tube_mask

__all__ = [
    "ClipRecord",
    "EncoderConfig",
    "HeadConfig",
    "MaskPlan",
    "MetricsReport",
    "RunProfile",
    "ScoredInstance",
    "SplitSpec",
    "SyntheticSpec",
    "TrainConfig",
    "VideoAutoencoder",
    "auroc",
    "desk_profile",
    "evaluate_modality",
    "paper_profile",
    "run_experiment",
    "synth_generate",
    "tube_mask",
]
