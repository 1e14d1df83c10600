"""Temporal-rolling set-abstraction encoder.

Frames are processed as one flat batch of point sets. At every layer the
support points come from frame t while the query centers are farthest-point
sampled from frame t+1 (circular roll), so local aggregation windows span
adjacent frames and accumulate motion as the stack deepens. The stack keeps
the temporal length T and shrinks the spatial token count by each layer's
stride.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from pydantic import BaseModel, Field, model_validator
from torch import nn

from .errors import ConfigError, NumericalError
from .geometry import (
    batched_farthest_point_sample,
    batched_knn,
    canonical_start_indices,
    index_points,
    localize,
)


class EncoderLayerConfig(BaseModel, extra="forbid"):
    spatial_stride: int = Field(ge=1)
    k_neighbors: int = Field(ge=1)
    mlp_widths: list[int]

    @model_validator(mode="after")
    def _check_widths(self):
        if not self.mlp_widths or any(w < 1 for w in self.mlp_widths):
            raise ValueError("mlp_widths must be a non-empty list of positive ints")
        return self


class EncoderConfig(BaseModel, extra="forbid"):
    layers: list[EncoderLayerConfig]
    input_points: int = Field(ge=1)
    input_frames: int = Field(ge=2)
    output_channels: int = Field(ge=1)
    norm: str = "batch"  # batch | layer | none
    fps_start: str = "first"  # first | canonical | random
    temporal_wrap: str = "circular"  # circular | truncate

    @model_validator(mode="after")
    def _check(self):
        if not self.layers:
            raise ValueError("encoder needs at least one layer")
        if self.layers[-1].mlp_widths[-1] != self.output_channels:
            raise ValueError(
                f"output_channels={self.output_channels} must equal the last "
                f"MLP width {self.layers[-1].mlp_widths[-1]}"
            )
        if self.norm not in ("batch", "layer", "none"):
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.fps_start not in ("first", "canonical", "random"):
            raise ValueError(f"unknown fps_start {self.fps_start!r}")
        if self.temporal_wrap not in ("circular", "truncate"):
            raise ValueError(f"unknown temporal_wrap {self.temporal_wrap!r}")
        n = self.input_points
        for i, layer in enumerate(self.layers):
            n = n // layer.spatial_stride
            if n < 1:
                raise ValueError(f"layer {i} stride leaves no query points")
        return self

    @property
    def token_counts(self) -> list[int]:
        counts = []
        n = self.input_points
        for layer in self.layers:
            n = n // layer.spatial_stride
            counts.append(n)
        return counts

    @property
    def output_tokens(self) -> int:
        return self.token_counts[-1]


def default_encoder_config() -> EncoderConfig:
    """Full-scale default: 2048 points x 24 frames down to 16 x 1024 tokens."""
    return EncoderConfig(
        layers=[
            EncoderLayerConfig(spatial_stride=16, k_neighbors=48, mlp_widths=[64, 64, 128]),
            EncoderLayerConfig(spatial_stride=4, k_neighbors=32, mlp_widths=[128, 128, 256]),
            EncoderLayerConfig(spatial_stride=2, k_neighbors=8, mlp_widths=[256, 512, 1024]),
        ],
        input_points=2048,
        input_frames=24,
        output_channels=1024,
    )


@dataclass
class FeatureGrid:
    """Encoder output: tokens [B, T, M, D] and their query centers [B, T, M, 3]."""

    tokens: torch.Tensor
    query_coords: torch.Tensor

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.tokens.shape)


def _make_norm(kind: str, channels: int) -> nn.Module | None:
    if kind == "batch":
        return nn.BatchNorm2d(channels)
    if kind == "layer":
        return nn.GroupNorm(1, channels)
    return None


class SetAbstraction(nn.Module):
    """Group k neighbors per query, encode relative regions, max-pool.

    The shared MLP runs as 1x1 convolutions over [F, C, M, K]; per-point
    inputs are the localized coordinates concatenated with the grouped
    support features (when present).
    """

    def __init__(self, in_feature_channels: int, cfg: EncoderLayerConfig, norm: str = "batch"):
        super().__init__()
        self.k = cfg.k_neighbors
        self.in_feature_channels = in_feature_channels
        convs, norms = [], []
        prev = 3 + in_feature_channels
        for width in cfg.mlp_widths:
            convs.append(nn.Conv2d(prev, width, kernel_size=1))
            norms.append(_make_norm(norm, width))
            prev = width
        self.convs = nn.ModuleList(convs)
        self.norms = nn.ModuleList([n if n is not None else nn.Identity() for n in norms])
        self.out_channels = prev

    def forward(
        self,
        support_xyz: torch.Tensor,
        support_feats: torch.Tensor | None,
        query_xyz: torch.Tensor,
    ) -> torch.Tensor:
        # support_xyz [F, N, 3], support_feats [F, N, C] or None, query_xyz [F, M, 3]
        idx = batched_knn(query_xyz, support_xyz, self.k)  # [F, M, K]
        grouped = index_points(support_xyz, idx)  # [F, M, K, 3]
        feats = localize(grouped, query_xyz)
        if support_feats is not None:
            feats = torch.cat([feats, index_points(support_feats, idx)], dim=-1)
        x = feats.permute(0, 3, 1, 2)  # [F, 3+C, M, K]
        for conv, norm in zip(self.convs, self.norms):
            x = F.relu(norm(conv(x)))
        x = x.amax(dim=-1)  # [F, D, M]
        if not torch.isfinite(x).all():
            raise NumericalError(
                f"non-finite activations in set-abstraction layer ({self.out_channels} ch)"
            )
        return x.transpose(1, 2)  # [F, M, D]


class RollingEncoder(nn.Module):
    """Stack of set-abstraction layers with temporally rolled query points."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        layers = []
        feat_channels = 0
        for layer_cfg in cfg.layers:
            layers.append(SetAbstraction(feat_channels, layer_cfg, norm=cfg.norm))
            feat_channels = layer_cfg.mlp_widths[-1]
        self.layers = nn.ModuleList(layers)

    def _fps_starts(self, coords: torch.Tensor) -> torch.Tensor:
        frames = coords.shape[0]
        if self.cfg.fps_start == "first":
            return torch.zeros(frames, dtype=torch.long, device=coords.device)
        if self.cfg.fps_start == "canonical":
            return canonical_start_indices(coords)
        return torch.randint(0, coords.shape[1], (frames,), device=coords.device)

    def forward(self, coords: torch.Tensor) -> FeatureGrid:
        # coords [B, T, N, 3]
        if coords.dim() != 4 or coords.shape[-1] != 3:
            raise ConfigError(f"encoder expects [B, T, N, 3] coords, got {tuple(coords.shape)}")
        b, t, n, _ = coords.shape
        if t != self.cfg.input_frames:
            raise ConfigError(f"config expects {self.cfg.input_frames} frames, got {t}")
        if n != self.cfg.input_points:
            raise ConfigError(f"config expects {self.cfg.input_points} points, got {n}")

        xyz = coords.reshape(b * t, n, 3)
        feats: torch.Tensor | None = None
        for layer, layer_cfg in zip(self.layers, self.cfg.layers):
            xyz, feats, t = self._one_layer(layer, layer_cfg, xyz, feats, b, t)
        m = xyz.shape[1]
        d = feats.shape[2]
        return FeatureGrid(
            tokens=feats.reshape(b, t, m, d), query_coords=xyz.reshape(b, t, m, 3)
        )

    def _one_layer(self, layer, layer_cfg, xyz, feats, b, t):
        n = xyz.shape[1]
        m = n // layer_cfg.spatial_stride
        if self.cfg.temporal_wrap == "circular":
            rolled_xyz = torch.roll(xyz.reshape(b, t, n, 3), shifts=-1, dims=1)
            rolled_xyz = rolled_xyz.reshape(b * t, n, 3)
            t_out = t
            support_xyz, support_feats = xyz, feats
        else:
            # truncate: drop the final frame's transition instead of wrapping
            if t < 2:
                raise ConfigError("truncate wrap ran out of frames; reduce layer count")
            frames = xyz.reshape(b, t, n, 3)
            rolled_xyz = frames[:, 1:].reshape(b * (t - 1), n, 3)
            support_xyz = frames[:, :-1].reshape(b * (t - 1), n, 3)
            if feats is not None:
                c = feats.shape[2]
                support_feats = feats.reshape(b, t, n, c)[:, :-1].reshape(b * (t - 1), n, c)
            else:
                support_feats = None
            t_out = t - 1

        starts = self._fps_starts(rolled_xyz)
        query_idx = batched_farthest_point_sample(rolled_xyz, m, starts)  # [F, m]
        query_xyz = index_points(rolled_xyz, query_idx)  # [F, m, 3]
        new_feats = layer(support_xyz, support_feats, query_xyz)  # [F, m, D]
        return query_xyz, new_feats, t_out


class ClassificationHead(nn.Module):
    """Global max-pool over space then time, followed by a two-layer MLP."""

    def __init__(self, in_channels: int, num_classes: int, hidden: int = 512, dropout: float = 0.5):
        super().__init__()
        self.fc1 = nn.Linear(in_channels, hidden)
        self.drop = nn.Dropout(dropout)
        self.fc2 = nn.Linear(hidden, num_classes)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        # tokens [B, T, M, D] -> logits [B, num_classes]
        x = tokens.amax(dim=2).amax(dim=1)
        x = self.drop(F.relu(self.fc1(x)))
        return self.fc2(x)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)
