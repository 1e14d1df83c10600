"""Training, evaluation, diagnostics and reporting runners.

Four regimes share one config surface: `pretrain` optimizes encoder plus
reconstructor under the matching loss with no labels, `finetune` loads a
pretrained encoder and trains it with a fresh classification head,
`probe` does the same but freezes the encoder, and `e2e` trains everything
jointly with cross-entropy plus a weighted matching loss.
"""

from __future__ import annotations

import json
import random
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import yaml
from pydantic import BaseModel, Field
from torch import nn

from .checkpoint import (
    has_prefix,
    load_checkpoint,
    save_checkpoint,
    state_dict_to_arrays,
    load_arrays_into_module,
)
from .data import (
    SynthConfig,
    clip_sample,
    load_manifest,
    load_pcv,
    normalize_video,
    resample_video,
    synth_generate,
    validate_manifest,
)
from .encoder import (
    ClassificationHead,
    EncoderConfig,
    RollingEncoder,
    count_parameters,
    default_encoder_config,
)
from .errors import ConfigError, DataError, NumericalError
from .geometry import PointCloudVideo
from .losses import matching_loss, cross_entropy, representation_diagnostics
from .operator import CrossDimensionReconstructor, OperatorConfig

MODES = ("synth-data", "pretrain", "finetune", "probe", "e2e", "eval", "diagnose", "report")


class OptimConfig(BaseModel, extra="forbid"):
    lr: float = Field(default=1e-3, gt=0)
    weight_decay: float = Field(default=1e-4, ge=0)
    epochs: int = Field(default=30, ge=1)
    batch_size: int = Field(default=8, ge=1)
    schedule: str = "cosine"  # cosine | none


class LossConfig(BaseModel, extra="forbid"):
    kind: str = "infonce"  # infonce | l2 | cosine
    temperature: float = Field(default=0.07, gt=0)
    normalize: bool = True


class OperatorSettings(BaseModel, extra="forbid"):
    """User-facing reconstructor knobs; token counts derive from the encoder."""

    d_model: int = 512
    num_heads: int = 8
    num_basis: int = 16
    use_mhsa: bool = True
    use_spectral: bool = True
    use_mhca: bool = True
    direction: str = "t_to_s"
    per_channel_weights: bool = True
    positional: str = "learned"
    max_frames: int = 64


class RunConfig(BaseModel, extra="forbid"):
    mode: str = "e2e"
    data_root: str = "."
    manifest: str = "manifest.jsonl"
    encoder: EncoderConfig = Field(default_factory=default_encoder_config)
    operator: OperatorSettings = Field(default_factory=OperatorSettings)
    loss: LossConfig = Field(default_factory=LossConfig)
    optim: OptimConfig = Field(default_factory=OptimConfig)
    num_classes: int | None = None  # derived from the manifest when omitted
    lambda_match: float = 1.0
    clip_len: int | None = None
    eval_every: int = Field(default=5, ge=1)
    normalize_data: bool = True
    head_hidden: int = 512
    head_dropout: float = 0.5
    seed: int = 0
    checkpoint_in: str | None = None
    out_dir: str = "runs/out"
    synth: SynthConfig | None = None

    def operator_config(self) -> OperatorConfig:
        return OperatorConfig(
            feature_channels=self.encoder.output_channels,
            spatial_tokens=self.encoder.output_tokens,
            max_frames=max(self.operator.max_frames, self.encoder.input_frames),
            d_model=self.operator.d_model,
            num_heads=self.operator.num_heads,
            num_basis=self.operator.num_basis,
            use_mhsa=self.operator.use_mhsa,
            use_spectral=self.operator.use_spectral,
            use_mhca=self.operator.use_mhca,
            direction=self.operator.direction,
            per_channel_weights=self.operator.per_channel_weights,
            positional=self.operator.positional,
        )


def load_run_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    """Parse a YAML/JSON config file into a RunConfig, rejecting unknown keys."""
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file is not valid YAML/JSON: {exc}") from exc
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a mapping")
    for key, value in (overrides or {}).items():
        node = raw
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    try:
        return RunConfig(**raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid run config: {exc}") from exc


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)


class MotionModel(nn.Module):
    """Encoder plus optional reconstructor and optional classification head."""

    def __init__(
        self,
        encoder_cfg: EncoderConfig,
        operator_cfg: OperatorConfig | None = None,
        num_classes: int | None = None,
        head_hidden: int = 512,
        head_dropout: float = 0.5,
    ):
        super().__init__()
        self.encoder = RollingEncoder(encoder_cfg)
        self.operator = CrossDimensionReconstructor(operator_cfg) if operator_cfg else None
        self.head = (
            ClassificationHead(
                encoder_cfg.output_channels, num_classes, head_hidden, head_dropout
            )
            if num_classes
            else None
        )

    def forward(self, coords: torch.Tensor):
        return self.encoder(coords)


@dataclass
class Split:
    coords: torch.Tensor  # [V, T, N, 3]
    labels: torch.Tensor  # [V]
    videos: list[PointCloudVideo] = field(default_factory=list)


@dataclass
class Dataset:
    train: Split
    test: Split
    num_classes: int


def _prepare_video(video: PointCloudVideo, cfg: RunConfig) -> PointCloudVideo:
    if cfg.normalize_data:
        video = normalize_video(video)
    if video.points_per_frame != cfg.encoder.input_points:
        video = resample_video(video, cfg.encoder.input_points, seed=cfg.seed)
    return video


def load_dataset(cfg: RunConfig) -> Dataset:
    root = Path(cfg.data_root)
    entries = load_manifest(root / cfg.manifest)
    validate_manifest(entries, root)
    splits = {"train": [], "test": []}
    for entry in entries:
        video = _prepare_video(load_pcv(root / entry.path), cfg)
        video.label = entry.label
        splits[entry.split].append(video)
    num_classes = cfg.num_classes or (max(e.label for e in entries) + 1)

    def collate(videos: list[PointCloudVideo]) -> Split:
        for v in videos:
            if v.num_frames < cfg.encoder.input_frames:
                raise DataError(
                    f"video has {v.num_frames} frames, config needs "
                    f"{cfg.encoder.input_frames}"
                )
        # stack once when every video already matches the clip length;
        # longer videos are clipped per batch instead
        if videos and all(v.num_frames == cfg.encoder.input_frames for v in videos):
            coords = torch.stack([v.as_tensor() for v in videos])
        else:
            coords = torch.empty(0)
        labels = torch.tensor([v.label if v.label is not None else -1 for v in videos])
        return Split(coords=coords, labels=labels, videos=videos)

    return Dataset(train=collate(splits["train"]), test=collate(splits["test"]), num_classes=num_classes)


def _train_batch_coords(split: Split, idx: torch.Tensor, cfg: RunConfig, epoch: int) -> torch.Tensor:
    if split.coords.numel():
        return split.coords[idx]
    clips = []
    for j in idx.tolist():
        clip = clip_sample(
            split.videos[j],
            cfg.encoder.input_frames,
            mode="random_start",
            seed=cfg.seed * 1000003 + epoch * 997 + j,
        )[0]
        clips.append(clip.as_tensor())
    return torch.stack(clips)


@dataclass
class RunResult:
    checkpoint_path: str | None
    metrics_path: str | None
    best_accuracy: float | None
    final_loss: float | None
    epochs_run: int
    param_counts: dict
    seed: int

    def to_dict(self) -> dict:
        return {
            "checkpoint_path": self.checkpoint_path,
            "metrics_path": self.metrics_path,
            "best_accuracy": self.best_accuracy,
            "final_loss": self.final_loss,
            "epochs_run": self.epochs_run,
            "param_counts": self.param_counts,
            "seed": self.seed,
        }


def _param_counts(model: MotionModel) -> dict:
    counts = {"param_count_encoder": count_parameters(model.encoder)}
    counts["param_count_operator"] = count_parameters(model.operator) if model.operator else 0
    counts["param_count_head"] = count_parameters(model.head) if model.head else 0
    counts["param_count_total"] = (
        counts["param_count_encoder"]
        + counts["param_count_operator"]
        + counts["param_count_head"]
    )
    return counts


def save_model(path: str | Path, cfg: RunConfig, model: MotionModel, num_classes: int | None) -> None:
    config = {
        "encoder": model.encoder.cfg.model_dump(),
        "operator": model.operator.cfg.model_dump() if model.operator else None,
        "num_classes": num_classes if model.head else None,
        "head_hidden": cfg.head_hidden,
        "head_dropout": cfg.head_dropout,
    }
    arrays = state_dict_to_arrays(model.encoder, "encoder.")
    if model.operator:
        arrays.update(state_dict_to_arrays(model.operator, "operator."))
    if model.head:
        arrays.update(state_dict_to_arrays(model.head, "head."))
    save_checkpoint(path, config, arrays)


def load_model(path: str | Path) -> tuple[MotionModel, dict]:
    """Rebuild a full model exactly as checkpointed."""
    config, arrays = load_checkpoint(path)
    if not has_prefix(arrays, "encoder."):
        raise DataError("checkpoint is missing encoder parameters")
    encoder_cfg = EncoderConfig(**config["encoder"])
    operator_cfg = OperatorConfig(**config["operator"]) if config.get("operator") else None
    model = MotionModel(
        encoder_cfg,
        operator_cfg,
        num_classes=config.get("num_classes"),
        head_hidden=config.get("head_hidden", 512),
        head_dropout=config.get("head_dropout", 0.5),
    )
    load_arrays_into_module(model.encoder, arrays, "encoder.")
    if model.operator:
        load_arrays_into_module(model.operator, arrays, "operator.")
    if model.head:
        load_arrays_into_module(model.head, arrays, "head.")
    return model, config


def load_encoder_from(path: str | Path, cfg: RunConfig, num_classes: int) -> MotionModel:
    """Fresh model with a checkpointed encoder and a newly initialized head."""
    config, arrays = load_checkpoint(path)
    if not has_prefix(arrays, "encoder."):
        raise DataError("checkpoint is missing encoder parameters")
    encoder_cfg = EncoderConfig(**config["encoder"])
    model = MotionModel(
        encoder_cfg,
        None,
        num_classes=num_classes,
        head_hidden=cfg.head_hidden,
        head_dropout=cfg.head_dropout,
    )
    load_arrays_into_module(model.encoder, arrays, "encoder.")
    return model


class MetricsLog:
    """Append-only newline-delimited JSON training log."""

    def __init__(self, out_dir: Path):
        out_dir.mkdir(parents=True, exist_ok=True)
        self.path = out_dir / "metrics.jsonl"
        self.path.write_text("")

    def append(self, record: dict) -> None:
        with open(self.path, "a") as fh:
            fh.write(json.dumps(record) + "\n")


def _dump_failure(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "failure_dump.json").write_text(json.dumps(payload, indent=2))


def evaluate(model: MotionModel, split: Split, cfg: RunConfig) -> dict:
    """Accuracy with uniform-cover clip voting (logits averaged per video)."""
    if model.head is None:
        raise ConfigError("evaluation requires a classification head")
    if len(split.videos) == 0:
        raise DataError("evaluation split is empty")
    clip_len = cfg.clip_len or cfg.encoder.input_frames
    if clip_len != cfg.encoder.input_frames:
        raise ConfigError("clip_len must equal the encoder input frame count")
    num_classes = model.head.fc2.out_features
    max_label = int(split.labels.max().item())
    if max_label >= num_classes:
        raise DataError(
            f"label {max_label} out of range for a {num_classes}-way head"
        )
    model.eval()
    correct = 0
    per_class_total = {}
    per_class_correct = {}
    with torch.no_grad():
        for video, label in zip(split.videos, split.labels.tolist()):
            clips = clip_sample(video, clip_len, mode="uniform_cover")
            coords = torch.stack([c.as_tensor() for c in clips])
            logits = model.head(model.encoder(coords).tokens).mean(dim=0)
            pred = int(logits.argmax().item())
            per_class_total[label] = per_class_total.get(label, 0) + 1
            if pred == label:
                correct += 1
                per_class_correct[label] = per_class_correct.get(label, 0) + 1
    n = len(split.videos)
    per_class = {
        str(label): per_class_correct.get(label, 0) / total
        for label, total in sorted(per_class_total.items())
    }
    return {"accuracy": correct / n, "per_class_accuracy": per_class, "num_samples": n}


def _loss_for_mode(cfg: RunConfig, model: MotionModel, coords, labels):
    """Returns (optimized loss, extra metric dict)."""
    grid = model.encoder(coords)
    extras = {}
    if cfg.mode == "pretrain":
        pred, target, neg = model.operator(grid.tokens)
        loss = matching_loss(
            cfg.loss.kind, pred, target, neg, cfg.loss.temperature, cfg.loss.normalize
        )
        return loss, extras
    if cfg.mode in ("finetune", "probe"):
        return cross_entropy(model.head(grid.tokens), labels), extras
    if cfg.mode == "e2e":
        ce = cross_entropy(model.head(grid.tokens), labels)
        if cfg.lambda_match > 0:
            pred, target, neg = model.operator(grid.tokens)
            match = matching_loss(
                cfg.loss.kind, pred, target, neg, cfg.loss.temperature, cfg.loss.normalize
            )
            extras["match_loss"] = float(match.item())
            return ce + cfg.lambda_match * match, extras
        with torch.no_grad():
            pred, target, neg = model.operator(grid.tokens)
            extras["match_loss"] = float(
                matching_loss(
                    cfg.loss.kind, pred, target, neg, cfg.loss.temperature, cfg.loss.normalize
                ).item()
            )
        return ce, extras
    raise ConfigError(f"mode {cfg.mode!r} has no training loss")


def _train_loop(cfg: RunConfig, model: MotionModel, dataset: Dataset, trainable_params) -> RunResult:
    out_dir = Path(cfg.out_dir)
    log = MetricsLog(out_dir)
    if len(dataset.train.videos) == 0:
        raise DataError("training split is empty")
    opt = torch.optim.AdamW(
        trainable_params, lr=cfg.optim.lr, weight_decay=cfg.optim.weight_decay
    )
    sched = (
        torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=cfg.optim.epochs)
        if cfg.optim.schedule == "cosine"
        else None
    )
    supervised = cfg.mode in ("finetune", "probe", "e2e")
    best_accuracy = None
    final_loss = None
    n_train = len(dataset.train.videos)
    for epoch in range(cfg.optim.epochs):
        start = time.perf_counter()
        if cfg.mode == "probe":
            model.head.train()
            model.encoder.eval()
        else:
            model.train()
        g = torch.Generator().manual_seed(cfg.seed * 100003 + epoch)
        order = torch.randperm(n_train, generator=g)
        epoch_loss, steps = 0.0, 0
        for i in range(0, n_train, cfg.optim.batch_size):
            idx = order[i : i + cfg.optim.batch_size]
            coords = _train_batch_coords(dataset.train, idx, cfg, epoch)
            labels = dataset.train.labels[idx]
            loss, _ = _loss_for_mode(cfg, model, coords, labels)
            if not torch.isfinite(loss):
                _dump_failure(
                    out_dir,
                    {
                        "mode": cfg.mode,
                        "epoch": epoch,
                        "step": steps,
                        "loss": float(loss.item()),
                        "seed": cfg.seed,
                    },
                )
                raise NumericalError(
                    f"non-finite loss at epoch {epoch} step {steps}; state dumped to "
                    f"{out_dir / 'failure_dump.json'}"
                )
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            epoch_loss += float(loss.item())
            steps += 1
        if sched is not None:
            sched.step()
        final_loss = epoch_loss / max(steps, 1)
        record = {
            "epoch": epoch,
            "train_loss": final_loss,
            "eval_accuracy": None,
            "wall_time": time.perf_counter() - start,
        }
        if supervised and len(dataset.test.videos) > 0 and (
            (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.optim.epochs - 1
        ):
            record["eval_accuracy"] = evaluate(model, dataset.test, cfg)["accuracy"]
            if best_accuracy is None or record["eval_accuracy"] > best_accuracy:
                best_accuracy = record["eval_accuracy"]
        log.append(record)

    counts = _param_counts(model)
    log.append(
        {"best_accuracy": best_accuracy, "param_count": counts["param_count_total"], "seed": cfg.seed}
    )
    ckpt = out_dir / "model.ckpt"
    save_model(ckpt, cfg, model, dataset.num_classes)
    return RunResult(
        checkpoint_path=str(ckpt),
        metrics_path=str(log.path),
        best_accuracy=best_accuracy,
        final_loss=final_loss,
        epochs_run=cfg.optim.epochs,
        param_counts=counts,
        seed=cfg.seed,
    )


def run_synth(cfg: RunConfig) -> dict:
    if cfg.synth is None:
        raise ConfigError("synth-data mode requires a `synth` config section")
    entries = synth_generate(cfg.synth, cfg.data_root)
    return {
        "out_dir": str(cfg.data_root),
        "manifest_path": str(Path(cfg.data_root) / "manifest.jsonl"),
        "num_train": sum(e.split == "train" for e in entries),
        "num_test": sum(e.split == "test" for e in entries),
        "num_classes": cfg.synth.num_classes,
    }


def run_pretrain(cfg: RunConfig) -> RunResult:
    seed_everything(cfg.seed)
    dataset = load_dataset(cfg)
    model = MotionModel(cfg.encoder, cfg.operator_config(), num_classes=None)
    return _train_loop(cfg, model, dataset, model.parameters())


def run_finetune(cfg: RunConfig) -> RunResult:
    if not cfg.checkpoint_in:
        raise ConfigError("finetune requires checkpoint_in")
    seed_everything(cfg.seed)
    dataset = load_dataset(cfg)
    model = load_encoder_from(cfg.checkpoint_in, cfg, dataset.num_classes)
    return _train_loop(cfg, model, dataset, model.parameters())


def run_probe(cfg: RunConfig) -> RunResult:
    if not cfg.checkpoint_in:
        raise ConfigError("probe requires checkpoint_in")
    seed_everything(cfg.seed)
    dataset = load_dataset(cfg)
    model = load_encoder_from(cfg.checkpoint_in, cfg, dataset.num_classes)
    for p in model.encoder.parameters():
        p.requires_grad_(False)
    result = _train_loop(cfg, model, dataset, model.head.parameters())
    result.param_counts["param_count_trained"] = count_parameters(model.head)
    return result


def run_e2e(cfg: RunConfig) -> RunResult:
    seed_everything(cfg.seed)
    dataset = load_dataset(cfg)
    model = MotionModel(
        cfg.encoder,
        cfg.operator_config(),
        num_classes=dataset.num_classes,
        head_hidden=cfg.head_hidden,
        head_dropout=cfg.head_dropout,
    )
    return _train_loop(cfg, model, dataset, model.parameters())


def run_eval(cfg: RunConfig) -> dict:
    if not cfg.checkpoint_in:
        raise ConfigError("eval requires checkpoint_in")
    seed_everything(cfg.seed)
    dataset = load_dataset(cfg)
    model, _ = load_model(cfg.checkpoint_in)
    if model.head is None:
        raise DataError("checkpoint has no classification head to evaluate")
    return evaluate(model, dataset.test, cfg)


def run_diagnose(cfg: RunConfig) -> dict:
    """Alignment/uniformity diagnostics over the test split.

    Without a checkpoint this diagnoses a randomly initialized model (useful
    as the untrained baseline); missing heads are initialized from the seed.
    """
    seed_everything(cfg.seed)
    dataset = load_dataset(cfg)
    if cfg.checkpoint_in:
        model, _ = load_model(cfg.checkpoint_in)
        if model.head is None:
            model.head = ClassificationHead(
                model.encoder.cfg.output_channels,
                dataset.num_classes,
                cfg.head_hidden,
                cfg.head_dropout,
            )
    else:
        model = MotionModel(
            cfg.encoder,
            None,
            num_classes=dataset.num_classes,
            head_hidden=cfg.head_hidden,
            head_dropout=cfg.head_dropout,
        )
    if len(dataset.test.videos) == 0:
        raise DataError("diagnose requires a nonempty test split")
    model.eval()
    grids, logits = [], []
    with torch.no_grad():
        for video in dataset.test.videos:
            clips = clip_sample(video, cfg.encoder.input_frames, mode="uniform_cover")
            coords = torch.stack([c.as_tensor() for c in clips])
            grid = model.encoder(coords)
            grids.append(grid.tokens.mean(dim=0))
            logits.append(model.head(grid.tokens).mean(dim=0))
    report = representation_diagnostics(torch.stack(grids), torch.stack(logits))
    return report.to_dict()


def run_report(cfg: RunConfig) -> dict:
    model = MotionModel(cfg.encoder, cfg.operator_config(), num_classes=None)
    counts = _param_counts(model)
    return {
        "param_count_total": counts["param_count_encoder"] + counts["param_count_operator"],
        "param_count_encoder": counts["param_count_encoder"],
        "param_count_operator": counts["param_count_operator"],
    }


RUNNERS = {
    "synth-data": run_synth,
    "pretrain": run_pretrain,
    "finetune": run_finetune,
    "probe": run_probe,
    "e2e": run_e2e,
    "eval": run_eval,
    "diagnose": run_diagnose,
    "report": run_report,
}


def run(cfg: RunConfig):
    if cfg.mode not in RUNNERS:
        raise ConfigError(f"unknown mode {cfg.mode!r}, expected one of {MODES}")
    result = RUNNERS[cfg.mode](cfg)
    return result.to_dict() if isinstance(result, RunResult) else result
