"""Request/response models for the HTTP service.

Requests reuse the package's RunConfig; each job endpoint overrides the mode
itself, so a stored config file works against any endpoint.
"""

from __future__ import annotations

from pydantic import BaseModel

from ..training import RunConfig  # noqa: F401  (re-exported as the request body)


class HealthResponse(BaseModel):
    status: str
    version: str


class SynthResponse(BaseModel):
    out_dir: str
    manifest_path: str
    num_train: int
    num_test: int
    num_classes: int


class TrainResponse(BaseModel):
    checkpoint_path: str | None
    metrics_path: str | None
    best_accuracy: float | None
    final_loss: float | None
    epochs_run: int
    param_counts: dict[str, int]
    seed: int


class EvalResponse(BaseModel):
    accuracy: float
    per_class_accuracy: dict[str, float]
    num_samples: int


class DiagnoseResponse(BaseModel):
    alignment_st: float
    uniformity_temporal: float
    uniformity_spatial: float
    uniformity_logits: float
    num_samples: int


class ReportResponse(BaseModel):
    param_count_total: int
    param_count_encoder: int
    param_count_operator: int


class ErrorResponse(BaseModel):
    category: str
    message: str
    code: str | None = None
