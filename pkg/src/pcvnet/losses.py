"""Training losses and representation diagnostics.

The contrastive matching loss scores each predicted token against its
corresponding true token (positive) and the sample's own pre-pooling grid
tokens (negatives). Alignment and uniformity follow the usual hypersphere
definitions: mean powered distance between paired views, and log-mean
Gaussian pair energy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigError, DataError


@dataclass
class MatchBatch:
    """One contrastive matching instance: rows of `positives` pair with rows
    of `predictions`; negatives are shared within the sample."""

    predictions: torch.Tensor  # [M, D] or [B, M, D]
    positives: torch.Tensor
    negatives: torch.Tensor  # [Q, D] or [B, Q, D]
    temperature: float = 0.07


def _batched(x: torch.Tensor) -> torch.Tensor:
    return x.unsqueeze(0) if x.dim() == 2 else x


def info_nce(
    predictions: torch.Tensor,
    positives: torch.Tensor,
    negatives: torch.Tensor,
    temperature: float = 0.07,
    normalize: bool = True,
) -> torch.Tensor:
    """Temperature-scaled softmax contrastive loss, mean over rows.

    Per row i: -log exp(s_i+/tau) / (exp(s_i+/tau) + sum_j exp(s_ij-/tau)),
    where s are dot products (of L2-normalized embeddings by default).
    Stabilized with log-sum-exp.
    """
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    pred = _batched(predictions)
    pos = _batched(positives)
    neg = _batched(negatives)
    if normalize:
        pred = F.normalize(pred, dim=-1)
        pos = F.normalize(pos, dim=-1)
        neg = F.normalize(neg, dim=-1)
    s_pos = (pred * pos).sum(-1) / temperature  # [B, M]
    s_neg = pred @ neg.transpose(-1, -2) / temperature  # [B, M, Q]
    logits = torch.cat([s_pos.unsqueeze(-1), s_neg], dim=-1)
    return (torch.logsumexp(logits, dim=-1) - s_pos).mean()


def info_nce_batch(batch: MatchBatch, normalize: bool = True) -> torch.Tensor:
    return info_nce(
        batch.predictions, batch.positives, batch.negatives, batch.temperature, normalize
    )


def l2_match(predictions: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean squared error over all entries."""
    return (predictions - targets).square().mean()


def cosine_match(predictions: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean (1 - cosine similarity) over token rows."""
    return (1.0 - F.cosine_similarity(predictions, targets, dim=-1)).mean()


def alignment_loss(xs: torch.Tensor, xt: torch.Tensor, alpha: float = 2.0) -> torch.Tensor:
    """Mean alpha-powered Euclidean distance between paired representations."""
    if xs.shape != xt.shape:
        raise DataError(f"alignment expects equal shapes, got {xs.shape} vs {xt.shape}")
    return (xs - xt).norm(dim=-1).pow(alpha).mean()


def uniformity_loss(x: torch.Tensor, t: float = 2.0) -> torch.Tensor:
    """Log of the mean Gaussian pair potential over all unordered pairs."""
    n = x.shape[0]
    if n < 2:
        raise DataError(f"uniformity needs at least two samples, got {n}")
    sq = torch.pdist(x).square()
    return torch.logsumexp(-t * sq, dim=0) - torch.log(torch.tensor(float(sq.numel())))


def cross_entropy(logits: torch.Tensor, labels) -> torch.Tensor:
    """Softmax cross-entropy with log-sum-exp stabilization."""
    single = logits.dim() == 1
    logits2 = logits.unsqueeze(0) if single else logits
    labels_t = torch.as_tensor(labels, dtype=torch.long, device=logits.device).reshape(-1)
    c = logits2.shape[-1]
    if labels_t.min() < 0 or labels_t.max() >= c:
        raise DataError(f"label out of range [0, {c}): {labels_t.tolist()}")
    log_probs = logits2 - torch.logsumexp(logits2, dim=-1, keepdim=True)
    return -log_probs.gather(1, labels_t.unsqueeze(1)).mean()


MATCH_LOSSES = ("infonce", "l2", "cosine")


def matching_loss(
    kind: str,
    predictions: torch.Tensor,
    targets: torch.Tensor,
    negatives: torch.Tensor | None = None,
    temperature: float = 0.07,
    normalize: bool = True,
) -> torch.Tensor:
    if kind == "infonce":
        if negatives is None:
            raise ConfigError("infonce requires negatives")
        return info_nce(predictions, targets, negatives, temperature, normalize)
    if kind == "l2":
        return l2_match(predictions, targets)
    if kind == "cosine":
        return cosine_match(predictions, targets)
    raise ConfigError(f"unknown matching loss {kind!r}, expected one of {MATCH_LOSSES}")


@dataclass
class DiagnosticsReport:
    alignment_st: float
    uniformity_temporal: float
    uniformity_spatial: float
    uniformity_logits: float
    num_samples: int

    def to_dict(self) -> dict:
        return {
            "alignment_st": self.alignment_st,
            "uniformity_temporal": self.uniformity_temporal,
            "uniformity_spatial": self.uniformity_spatial,
            "uniformity_logits": self.uniformity_logits,
            "num_samples": self.num_samples,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def format_table(self) -> str:
        rows = [
            ("alignment (S-T)", self.alignment_st),
            ("uniformity (T)", self.uniformity_temporal),
            ("uniformity (S)", self.uniformity_spatial),
            ("uniformity (logit)", self.uniformity_logits),
        ]
        width = max(len(name) for name, _ in rows)
        lines = [f"{'metric':<{width}}  value", "-" * (width + 9)]
        lines += [f"{name:<{width}}  {value: .4f}" for name, value in rows]
        lines.append(f"samples: {self.num_samples}")
        return "\n".join(lines)


def spatial_representation(tokens: torch.Tensor) -> torch.Tensor:
    """[B, T, M, D] -> [B, D]: max over time, mean over regions."""
    return tokens.amax(dim=1).mean(dim=1)


def temporal_representation(tokens: torch.Tensor) -> torch.Tensor:
    """[B, T, M, D] -> [B, D]: max over regions, mean over time."""
    return tokens.amax(dim=2).mean(dim=1)


def representation_diagnostics(tokens: torch.Tensor, logits: torch.Tensor) -> DiagnosticsReport:
    """Alignment and uniformity metrics from grids and logits of an eval set.

    tokens: [B, T, M, D] stacked per-sample grids; logits: [B, C].
    Spatial/temporal representations and softmax outputs are L2-normalized
    before scoring.
    """
    if tokens.shape[0] != logits.shape[0]:
        raise DataError("tokens and logits must cover the same samples")
    xs = F.normalize(spatial_representation(tokens), dim=-1)
    xt = F.normalize(temporal_representation(tokens), dim=-1)
    xl = F.normalize(F.softmax(logits, dim=-1), dim=-1)
    return DiagnosticsReport(
        alignment_st=alignment_loss(xs, xt).item(),
        uniformity_temporal=uniformity_loss(xt).item(),
        uniformity_spatial=uniformity_loss(xs).item(),
        uniformity_logits=uniformity_loss(xl).item(),
        num_samples=int(tokens.shape[0]),
    )
