"""Cross-dimension feature reconstruction head used for pretraining.

The encoder grid is max-pooled into sub-global temporal tokens (one per
frame) and sub-global spatial tokens (one per region). The module then maps
the temporal tokens to predicted spatial tokens: project to the latent
width, enhance with self-attention over frames, push through a residual
trigonometric basis expansion, and decode a learnable set of masked tokens
with cross-attention. Every stage can be ablated independently, and the
mapping direction can be reversed (predict temporal from spatial).
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from pydantic import BaseModel, Field, model_validator
from torch import nn

from .errors import ConfigError

DIRECTIONS = ("t_to_s", "s_to_t")


class OperatorConfig(BaseModel, extra="forbid"):
    feature_channels: int = Field(ge=1)
    spatial_tokens: int = Field(ge=1)
    max_frames: int = Field(default=64, ge=2)
    d_model: int = Field(default=512, ge=1)
    num_heads: int = Field(default=8, ge=1)
    num_basis: int = Field(default=16, ge=2)
    use_mhsa: bool = True
    use_spectral: bool = True
    use_mhca: bool = True
    direction: str = "t_to_s"
    per_channel_weights: bool = True
    positional: str = "learned"  # learned | sinusoidal
    spectral_init: str = "zero"  # zero | normal

    @model_validator(mode="after")
    def _check(self):
        if self.num_basis % 2 != 0:
            raise ValueError(f"num_basis must be even, got {self.num_basis}")
        if self.d_model % self.num_heads != 0:
            raise ValueError("d_model must be divisible by num_heads")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        if self.positional not in ("learned", "sinusoidal"):
            raise ValueError(f"unknown positional mode {self.positional!r}")
        if self.spectral_init not in ("zero", "normal"):
            raise ValueError(f"unknown spectral_init {self.spectral_init!r}")
        return self


def pool_subglobal(tokens: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Max-pool a [B, T, M, D] grid along each axis.

    Returns (temporal tokens [B, T, D], spatial tokens [B, M, D]).
    """
    return tokens.amax(dim=2), tokens.amax(dim=1)


class SpectralBasisLayer(nn.Module):
    """Residual sum of learnably weighted sin(k*x) / cos(k*x) responses.

    out = x + sum_k w_sin[k] * sin(k x) + sum_k w_cos[k] * cos(k x) for
    k = 1 .. num_basis/2, weights elementwise over channels (or scalar per
    frequency when per_channel is off). Zero init makes the layer start as
    the identity.
    """

    def __init__(self, d_model: int, num_basis: int, per_channel: bool = True, init: str = "zero"):
        super().__init__()
        if num_basis % 2 != 0:
            raise ConfigError(f"num_basis must be even, got {num_basis}")
        half = num_basis // 2
        width = d_model if per_channel else 1
        if init == "zero":
            w_sin = torch.zeros(half, width)
            w_cos = torch.zeros(half, width)
        else:
            g = torch.Generator().manual_seed(0)
            w_sin = 0.02 * torch.randn(half, width, generator=g)
            w_cos = 0.02 * torch.randn(half, width, generator=g)
        self.w_sin = nn.Parameter(w_sin)
        self.w_cos = nn.Parameter(w_cos)
        k = torch.arange(1, half + 1, dtype=torch.float32)
        self.register_buffer("frequencies", k, persistent=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x [..., d_model]; basis responses stack on a new frequency axis
        k = self.frequencies.to(x.dtype).view(-1, *([1] * x.dim()))  # [half, 1, ..., 1]
        kx = k * x.unsqueeze(0)  # [half, ..., d_model]
        w_sin = self.w_sin.to(x.dtype).view(self.w_sin.shape[0], *([1] * (x.dim() - 1)), -1)
        w_cos = self.w_cos.to(x.dtype).view(self.w_cos.shape[0], *([1] * (x.dim() - 1)), -1)
        return x + (w_sin * torch.sin(kx)).sum(0) + (w_cos * torch.cos(kx)).sum(0)


class MultiHeadAttention(nn.Module):
    """Standard softmax attention with per-head projections and a residual.

    Queries keep their identity through the residual; keys and values come
    from the source sequence (equal to the query sequence when used as
    self-attention).
    """

    def __init__(self, d_model: int, num_heads: int):
        super().__init__()
        if d_model % num_heads != 0:
            raise ConfigError("d_model must be divisible by num_heads")
        self.num_heads = num_heads
        self.d_head = d_model // num_heads
        self.w_q = nn.Linear(d_model, d_model)
        self.w_k = nn.Linear(d_model, d_model)
        self.w_v = nn.Linear(d_model, d_model)
        self.w_out = nn.Linear(d_model, d_model)

    def attention_weights(self, queries: torch.Tensor, source: torch.Tensor) -> torch.Tensor:
        b, lq, _ = queries.shape
        lk = source.shape[1]
        q = self.w_q(queries).view(b, lq, self.num_heads, self.d_head).transpose(1, 2)
        k = self.w_k(source).view(b, lk, self.num_heads, self.d_head).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)  # [B, H, Lq, Lk]
        return F.softmax(scores, dim=-1)

    def forward(self, queries: torch.Tensor, source: torch.Tensor) -> torch.Tensor:
        b, lq, d = queries.shape
        lk = source.shape[1]
        attn = self.attention_weights(queries, source)
        v = self.w_v(source).view(b, lk, self.num_heads, self.d_head).transpose(1, 2)
        heads = (attn @ v).transpose(1, 2).reshape(b, lq, d)
        return queries + self.w_out(heads)


def sinusoidal_table(length: int, d_model: int) -> torch.Tensor:
    position = torch.arange(length, dtype=torch.float32).unsqueeze(1)
    div = torch.exp(torch.arange(0, d_model, 2, dtype=torch.float32) * (-math.log(10000.0) / d_model))
    table = torch.zeros(length, d_model)
    table[:, 0::2] = torch.sin(position * div)
    table[:, 1::2] = torch.cos(position * div[: d_model // 2])
    return table


class CrossDimensionReconstructor(nn.Module):
    """Predict one pooled axis of the feature grid from the other.

    Forward returns (predicted tokens, target tokens, negatives), where the
    negatives are the sample's own T*M grid tokens before any pooling.
    """

    def __init__(self, cfg: OperatorConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.input_proj = nn.Linear(cfg.feature_channels, d)
        self.output_proj = nn.Linear(d, cfg.feature_channels)
        self.self_attn = MultiHeadAttention(d, cfg.num_heads)
        self.cross_attn = MultiHeadAttention(d, cfg.num_heads)
        self.spectral = SpectralBasisLayer(
            d, cfg.num_basis, per_channel=cfg.per_channel_weights, init=cfg.spectral_init
        )
        n_masked = cfg.spatial_tokens if cfg.direction == "t_to_s" else cfg.max_frames
        n_positions = max(cfg.max_frames, cfg.spatial_tokens)
        self.masked_tokens = nn.Parameter(0.02 * torch.randn(n_masked, d))
        if cfg.positional == "learned":
            self.position_table = nn.Parameter(0.02 * torch.randn(n_positions, d))
        else:
            self.register_buffer("position_table", sinusoidal_table(n_positions, d))

    def enhance(self, tokens: torch.Tensor) -> torch.Tensor:
        """Add index positional encoding and run self-attention over tokens."""
        length = tokens.shape[1]
        if length > self.position_table.shape[0]:
            raise ConfigError(
                f"sequence length {length} exceeds positional table "
                f"{self.position_table.shape[0]}"
            )
        x = tokens + self.position_table[:length].to(tokens.dtype)
        return self.self_attn(x, x)

    def forward(self, grid_tokens: torch.Tensor):
        # grid_tokens [B, T, M, D]
        if grid_tokens.dim() != 4:
            raise ConfigError(f"expected [B, T, M, D] grid, got {tuple(grid_tokens.shape)}")
        b, t, m, d = grid_tokens.shape
        f_t, f_s = pool_subglobal(grid_tokens)
        if self.cfg.direction == "t_to_s":
            source, target, n_out = f_t, f_s, m
        else:
            source, target, n_out = f_s, f_t, t
        if n_out > self.masked_tokens.shape[0]:
            raise ConfigError(
                f"target token count {n_out} exceeds masked token table "
                f"{self.masked_tokens.shape[0]}"
            )

        x = self.input_proj(source)  # [B, L, d_model]
        if self.cfg.use_mhsa:
            x = self.enhance(x)
        if self.cfg.use_spectral:
            x = self.spectral(x)
        masked = self.masked_tokens[:n_out].to(x.dtype).unsqueeze(0).expand(b, -1, -1)
        if self.cfg.use_mhca:
            latent = self.cross_attn(masked, x)
        else:
            # shape-preserving fallback: broadcast mean source over the
            # masked-token residuals
            latent = masked + x.mean(dim=1, keepdim=True)
        predicted = self.output_proj(latent)  # [B, n_out, D]
        negatives = grid_tokens.reshape(b, t * m, d)
        return predicted, target, negatives
