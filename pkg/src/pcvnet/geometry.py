"""Point-set geometry primitives: sampling, grouping, localization, frame pairing.

All operations are pure functions. Coordinates are (x, y, z) rows; distances
are squared Euclidean internally (monotone-equivalent, no square roots).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import DataError

Array = np.ndarray


@dataclass
class PointCloudFrame:
    """A single unordered set of 3-D points, shape [N, 3]."""

    coords: Array

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float32)
        if self.coords.ndim != 2 or self.coords.shape[1] != 3:
            raise DataError(f"frame coords must be [N, 3], got {self.coords.shape}")
        if self.coords.shape[0] < 1:
            raise DataError("frame must contain at least one point")
        if not np.isfinite(self.coords).all():
            raise DataError("frame coords contain non-finite values")

    @property
    def num_points(self) -> int:
        return self.coords.shape[0]


@dataclass
class PointCloudVideo:
    """An ordered sequence of frames plus optional label and metadata."""

    frames: list[PointCloudFrame]
    label: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.frames) < 2:
            raise DataError("video must contain at least two frames")

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    @property
    def points_per_frame(self) -> int:
        return self.frames[0].num_points

    def as_array(self) -> Array:
        """Stack frames into a [T, N, 3] float32 array (requires equal N)."""
        counts = {f.num_points for f in self.frames}
        if len(counts) != 1:
            raise DataError(f"frames have unequal point counts: {sorted(counts)}")
        return np.stack([f.coords for f in self.frames])

    def as_tensor(self) -> torch.Tensor:
        return torch.from_numpy(self.as_array())


def _as_coord_tensor(points) -> torch.Tensor:
    if isinstance(points, PointCloudFrame):
        points = points.coords
    if isinstance(points, np.ndarray):
        points = torch.from_numpy(np.ascontiguousarray(points))
    return points


def index_points(points: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    """Gather rows of a batched point/feature tensor.

    points: [B, N, C]; idx: [B, S] or [B, S, K] -> [B, S, C] or [B, S, K, C].
    """
    B = points.shape[0]
    batch = torch.arange(B, device=points.device)
    batch = batch.view(B, *([1] * (idx.dim() - 1)))
    return points[batch, idx]


def pairwise_sqdist(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Squared Euclidean distances, a: [..., M, 3], b: [..., N, 3] -> [..., M, N]."""
    diff = a.unsqueeze(-2) - b.unsqueeze(-3)  # [..., M, N, 3]
    return (diff * diff).sum(-1)


def canonical_start_index(coords: torch.Tensor) -> int:
    """Index of the lexicographically smallest point of [N, 3] coords.

    The same geometric set yields the same start point under any permutation
    of the input rows, which makes downstream FPS permutation-stable.
    """
    c = coords.detach().cpu().numpy()
    order = np.lexsort((c[:, 2], c[:, 1], c[:, 0]))
    return int(order[0])


def canonical_start_indices(coords: torch.Tensor) -> torch.Tensor:
    """Per-frame lexicographic start indices for [F, N, 3] coords -> [F]."""
    return torch.tensor(
        [canonical_start_index(coords[f]) for f in range(coords.shape[0])],
        dtype=torch.long,
        device=coords.device,
    )


def batched_farthest_point_sample(
    coords: torch.Tensor, count: int, start: torch.Tensor
) -> torch.Tensor:
    """Iterative farthest-point sampling over a batch of clouds.

    coords: [B, N, 3]; start: [B] start indices. Returns [B, count] indices.
    Each step selects the point maximizing the min squared distance to the
    already-selected set (torch.max tie-breaks to the lowest index).
    """
    B, N, _ = coords.shape
    if count <= 0:
        raise DataError(f"sample count must be positive, got {count}")
    if count > N:
        raise DataError(f"sample count exceeds point count ({count} > {N})")
    selected = torch.empty(B, count, dtype=torch.long, device=coords.device)
    min_d = torch.full((B, N), float("inf"), device=coords.device, dtype=coords.dtype)
    batch = torch.arange(B, device=coords.device)
    farthest = start.to(torch.long)
    for i in range(count):
        selected[:, i] = farthest
        centroid = coords[batch, farthest].unsqueeze(1)  # [B, 1, 3]
        d = ((coords - centroid) ** 2).sum(-1)  # [B, N]
        min_d = torch.minimum(min_d, d)
        farthest = min_d.argmax(dim=1)
    return selected


def farthest_point_sample(points, count: int, seed: int | None = None) -> torch.Tensor:
    """Farthest-point-sample `count` indices from an [N, 3] point set.

    The first point is index 0 when `seed` is None, otherwise uniform-random
    under the seed. Deterministic given (points, count, seed).
    """
    coords = _as_coord_tensor(points)
    n = coords.shape[0]
    if count <= 0:
        raise DataError(f"sample count must be positive, got {count}")
    if count > n:
        raise DataError(f"sample count exceeds point count ({count} > {n})")
    if seed is None:
        start = 0
    else:
        start = int(np.random.default_rng(seed).integers(0, n))
    idx = batched_farthest_point_sample(
        coords.unsqueeze(0), count, torch.tensor([start])
    )
    return idx[0]


def batched_knn(queries: torch.Tensor, supports: torch.Tensor, k: int) -> torch.Tensor:
    """k nearest supports per query, batched.

    queries: [B, M, 3], supports: [B, N, 3] -> [B, M, k] indices. Ties break
    to the lower support index (stable sort); if k > N the valid neighbors
    are repeated cyclically to fill the k slots.
    """
    if k < 1:
        raise DataError(f"k must be positive, got {k}")
    n = supports.shape[-2]
    d = pairwise_sqdist(queries, supports)  # [B, M, N]
    order = torch.argsort(d, dim=-1, stable=True)
    if k <= n:
        return order[..., :k]
    reps = -(-k // n)  # ceil division
    return order.tile((1, 1, reps))[..., :k]


def knn_group(queries, supports, k: int) -> torch.Tensor:
    """Unbatched kNN grouping: [M, 3] queries x [N, 3] supports -> [M, k]."""
    q = _as_coord_tensor(queries)
    s = _as_coord_tensor(supports)
    return batched_knn(q.unsqueeze(0), s.unsqueeze(0), k)[0]


def localize(neighbors: torch.Tensor, centers: torch.Tensor) -> torch.Tensor:
    """Translate neighbor coordinates into their center's local frame.

    neighbors: [..., M, K, 3], centers: [..., M, 3] -> neighbors - centers.
    """
    return neighbors - centers.unsqueeze(-2)


def temporal_roll_pairs(video_length: int) -> list[tuple[int, int]]:
    """(support_frame, query_frame) pairs under a circular temporal roll.

    Frame t is paired with frame (t + 1) mod T, so the last frame wraps to
    the first.
    """
    if video_length < 2:
        raise DataError(f"temporal rolling requires at least two frames, got {video_length}")
    return [(t, (t + 1) % video_length) for t in range(video_length)]
