"""Dataset formats and generators.

On-disk format PCV1: magic ``b"PCV1"``, header of three little-endian uint32
(frames T, points-per-frame N, channels C), then T*N*C little-endian float32
in frame-major, point-major, channel-major order. Manifests are
newline-delimited JSON objects with keys {path, label, split, subject}.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field

from .errors import (
    BadMagicError,
    ChannelCountError,
    DataError,
    LabelRangeError,
    MissingFileError,
    TruncatedPayloadError,
    UnknownSplitError,
)
from .geometry import PointCloudFrame, PointCloudVideo, farthest_point_sample

PCV_MAGIC = b"PCV1"
_HEADER = struct.Struct("<III")

SPLITS = ("train", "test")


def write_pcv(video: PointCloudVideo) -> bytes:
    arr = video.as_array()  # [T, N, 3] float32
    t, n, c = arr.shape
    payload = arr.astype("<f4", copy=False).tobytes()
    return PCV_MAGIC + _HEADER.pack(t, n, c) + payload


def read_pcv(data: bytes) -> PointCloudVideo:
    if data[:4] != PCV_MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {PCV_MAGIC!r}")
    if len(data) < 4 + _HEADER.size:
        raise TruncatedPayloadError("truncated header")
    t, n, c = _HEADER.unpack_from(data, 4)
    if c != 3:
        raise ChannelCountError(f"expected 3 channels, header says {c}")
    expected = 4 + _HEADER.size + t * n * c * 4
    if len(data) != expected:
        raise TruncatedPayloadError(
            f"truncated payload: expected {expected} bytes, got {len(data)}"
        )
    flat = np.frombuffer(data, dtype="<f4", offset=4 + _HEADER.size)
    coords = flat.reshape(t, n, c).astype(np.float32)
    return PointCloudVideo([PointCloudFrame(coords[i]) for i in range(t)])


def save_pcv(path: str | Path, video: PointCloudVideo) -> None:
    Path(path).write_bytes(write_pcv(video))


def load_pcv(path: str | Path) -> PointCloudVideo:
    p = Path(path)
    if not p.exists():
        raise MissingFileError(f"missing point cloud file: {p}")
    return read_pcv(p.read_bytes())


@dataclass
class ManifestEntry:
    path: str
    label: int
    split: str
    subject: int | None = None


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    p = Path(path)
    if not p.exists():
        raise MissingFileError(f"missing manifest: {p}")
    entries = []
    for line_no, line in enumerate(p.read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"manifest line {line_no} is not valid JSON: {exc}") from exc
        entries.append(
            ManifestEntry(
                path=obj["path"],
                label=int(obj["label"]),
                split=obj["split"],
                subject=obj.get("subject"),
            )
        )
    return entries


def save_manifest(path: str | Path, entries: list[ManifestEntry]) -> None:
    with open(path, "w") as fh:
        for e in entries:
            rec = {"path": e.path, "label": e.label, "split": e.split, "subject": e.subject}
            fh.write(json.dumps(rec) + "\n")


def validate_manifest(entries: list[ManifestEntry], root: str | Path) -> None:
    """Check splits, label contiguity, and file headers; raise a named error."""
    if not entries:
        raise DataError("manifest is empty")
    root = Path(root)
    for e in entries:
        if e.split not in SPLITS:
            raise UnknownSplitError(f"unknown split tag {e.split!r} for {e.path}")
    labels = sorted({e.label for e in entries})
    if labels != list(range(len(labels))):
        raise LabelRangeError(f"labels must form a contiguous 0-based range, got {labels}")
    for e in entries:
        path = root / e.path
        if not path.exists():
            raise MissingFileError(f"missing data file: {path}")
        with open(path, "rb") as fh:
            head = fh.read(4 + _HEADER.size)
        if head[:4] != PCV_MAGIC:
            raise BadMagicError(f"{path} is not a point cloud video file")
        t, n, c = _HEADER.unpack_from(head, 4)
        if c != 3:
            raise ChannelCountError(f"{path}: expected 3 channels, header says {c}")
        if path.stat().st_size != 4 + _HEADER.size + t * n * c * 4:
            raise TruncatedPayloadError(f"{path}: payload does not match header")


class SynthConfig(BaseModel, extra="forbid"):
    """Synthetic moving-shape dataset settings.

    Every class shares the frame-0 shape distribution (points on a unit
    sphere around a fixed off-origin center), so class identity is only
    recoverable from how frames change over time.
    """

    num_classes: int = Field(default=6, ge=1, le=6)
    samples_per_class: int = Field(default=50, ge=1)
    train_fraction: float = Field(default=0.8, gt=0.0, lt=1.0)
    points: int = Field(default=128, ge=8)
    frames: int = Field(default=8, ge=2)
    noise_sigma: float = Field(default=0.01, ge=0.0)
    seed: int = 0


# Shared sphere center. Off-origin so that rotation/scale/shear about the
# origin move the cloud mean, keeping all six classes separable from mean
# per-frame displacements alone.
_CENTER = np.array([0.3, 0.2, 0.25], dtype=np.float64)

CLASS_NAMES = (
    "static",
    "translate_x",
    "translate_y",
    "rotate_z",
    "oscillate_scale",
    "shear_drift",
)


def _motion(label: int, base: np.ndarray, t: int, total_frames: int) -> np.ndarray:
    if label == 0:
        return base
    if label == 1:
        return base + np.array([0.05 * t, 0.0, 0.0])
    if label == 2:
        return base + np.array([0.0, 0.05 * t, 0.0])
    if label == 3:
        theta = np.deg2rad(10.0 * t)
        c, s = np.cos(theta), np.sin(theta)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return base @ rot.T
    if label == 4:
        scale = 1.0 + 0.1 * np.sin(2.0 * np.pi * t / total_frames)
        return base * scale
    if label == 5:
        gamma = 0.05 * t
        out = base.copy()
        out[:, 0] = out[:, 0] + gamma * out[:, 2]
        return out
    raise DataError(f"unknown synthetic class {label}")


def synth_video(cfg: SynthConfig, label: int, sample_index: int) -> PointCloudVideo:
    """One deterministic sample: seeded sphere points animated by the class motion."""
    rng = np.random.default_rng([cfg.seed, label, sample_index])
    raw = rng.normal(size=(cfg.points, 3))
    base = raw / np.linalg.norm(raw, axis=1, keepdims=True) + _CENTER
    frames = []
    for t in range(cfg.frames):
        pts = _motion(label, base, t, cfg.frames)
        if cfg.noise_sigma > 0:
            pts = pts + rng.normal(scale=cfg.noise_sigma, size=pts.shape)
        frames.append(PointCloudFrame(pts.astype(np.float32)))
    return PointCloudVideo(frames, label=label, meta={"class_name": CLASS_NAMES[label]})


def synth_generate(cfg: SynthConfig, out_dir: str | Path) -> list[ManifestEntry]:
    """Write the full synthetic dataset plus its manifest; returns the entries."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_train = round(cfg.samples_per_class * cfg.train_fraction)
    entries = []
    for label in range(cfg.num_classes):
        for i in range(cfg.samples_per_class):
            video = synth_video(cfg, label, i)
            split = "train" if i < n_train else "test"
            rel = f"{CLASS_NAMES[label]}_{i:04d}.pcv"
            save_pcv(out / rel, video)
            entries.append(ManifestEntry(path=rel, label=label, split=split, subject=i))
    save_manifest(out / "manifest.jsonl", entries)
    return entries


def clip_sample(
    video: PointCloudVideo,
    clip_len: int,
    mode: str = "uniform_cover",
    seed: int | None = None,
) -> list[PointCloudVideo]:
    """Cut fixed-length frame windows out of a video.

    ``random_start`` returns one window at a seeded random offset (training);
    ``uniform_cover`` returns ceil(T/L) windows with evenly spaced starts that
    jointly cover every frame (evaluation).
    """
    t = video.num_frames
    if clip_len > t:
        raise DataError(f"clip length {clip_len} exceeds video length {t}")

    def window(start: int) -> PointCloudVideo:
        return PointCloudVideo(
            video.frames[start : start + clip_len], label=video.label, meta=dict(video.meta)
        )

    if mode == "random_start":
        start = int(np.random.default_rng(seed).integers(0, t - clip_len + 1))
        return [window(start)]
    if mode == "uniform_cover":
        n = -(-t // clip_len)  # ceil
        if n == 1:
            return [window(0)]
        starts = [int(np.floor(i * (t - clip_len) / (n - 1))) for i in range(n)]
        return [window(s) for s in starts]
    raise DataError(f"unknown clip mode {mode!r}")


def normalize_video(video: PointCloudVideo) -> PointCloudVideo:
    """Center and scale by frame 0 only, preserving inter-frame motion.

    Subtracts the frame-0 centroid from all frames and divides by the maximum
    frame-0 point-to-centroid radius (falling back to 1 for a degenerate
    frame).
    """
    first = video.frames[0].coords.astype(np.float64)
    centroid = first.mean(axis=0)
    radius = float(np.linalg.norm(first - centroid, axis=1).max())
    if radius < 1e-12:
        radius = 1.0
    frames = [
        PointCloudFrame(((f.coords - centroid) / radius).astype(np.float32))
        for f in video.frames
    ]
    return PointCloudVideo(frames, label=video.label, meta=dict(video.meta))


def resample_frame(frame: PointCloudFrame, target_n: int, seed: int = 0) -> PointCloudFrame:
    """Force a frame to exactly ``target_n`` points.

    Downsampling uses farthest-point sampling; upsampling repeat-pads existing
    points with tiny seeded jitter (sigma 1e-4) so duplicates stay distinct.
    """
    n = frame.num_points
    if n == target_n:
        return frame
    if n > target_n:
        idx = farthest_point_sample(frame.coords, target_n, seed=None).numpy()
        return PointCloudFrame(frame.coords[idx])
    rng = np.random.default_rng(seed)
    extra = target_n - n
    pad_idx = np.arange(extra) % n
    pad = frame.coords[pad_idx] + rng.normal(scale=1e-4, size=(extra, 3)).astype(np.float32)
    return PointCloudFrame(np.concatenate([frame.coords, pad.astype(np.float32)], axis=0))


def resample_video(video: PointCloudVideo, target_n: int, seed: int = 0) -> PointCloudVideo:
    frames = [resample_frame(f, target_n, seed=seed + i) for i, f in enumerate(video.frames)]
    return PointCloudVideo(frames, label=video.label, meta=dict(video.meta))
