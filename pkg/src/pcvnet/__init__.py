"""Point cloud video representation learning.

A temporal-rolling set-abstraction encoder produces a frames-by-regions
feature grid; a spectral reconstruction head pretrains it by predicting the
pooled spatial tokens from the pooled temporal tokens under a contrastive
matching loss. Training, evaluation, diagnostics and data generation are
exposed through a FastAPI service and a thin CLI client.
"""

from .encoder import (
    ClassificationHead,
    EncoderConfig,
    EncoderLayerConfig,
    FeatureGrid,
    RollingEncoder,
    SetAbstraction,
    count_parameters,
    default_encoder_config,
)
from .geometry import (
    PointCloudFrame,
    PointCloudVideo,
    farthest_point_sample,
    knn_group,
    localize,
    temporal_roll_pairs,
)
from .losses import (
    alignment_loss,
    cosine_match,
    cross_entropy,
    info_nce,
    l2_match,
    representation_diagnostics,
    uniformity_loss,
)
from .operator import (
    CrossDimensionReconstructor,
    MultiHeadAttention,
    OperatorConfig,
    SpectralBasisLayer,
    pool_subglobal,
)
from .training import MotionModel, RunConfig, run

__all__ = [
    "ClassificationHead",
    "CrossDimensionReconstructor",
    "EncoderConfig",
    "EncoderLayerConfig",
    "FeatureGrid",
    "MotionModel",
    "MultiHeadAttention",
    "OperatorConfig",
    "PointCloudFrame",
    "PointCloudVideo",
    "RollingEncoder",
    "RunConfig",
    "SetAbstraction",
    "SpectralBasisLayer",
    "alignment_loss",
    "cosine_match",
    "count_parameters",
    "cross_entropy",
    "default_encoder_config",
    "farthest_point_sample",
    "info_nce",
    "knn_group",
    "l2_match",
    "localize",
    "pool_subglobal",
    "representation_diagnostics",
    "run",
    "temporal_roll_pairs",
    "uniformity_loss",
]
