"""Segmentation, the training loop, and the gradient-verification harness.

Clips are cut into fixed-length segments (default 5 s with 80% overlap,
giving a 1 s hop); a trailing remainder is zero-padded with silent labels.
Training minimizes the frame-averaged PIT loss with Adam under a two-step
learning-rate schedule; everything is seeded, and single-thread mode makes
runs bit-reproducible. Only the ground-truth activity mask is ever used in
the training loss (test-mode masking exists solely in inference).
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .dcase_io import read_labels, read_wav
from .errors import TrainingError, ValidationError
from .features import MelFilterbank, extract_features
from .losses import FrameTargets, tpit_loss
from .model import ModelConfig, init_model
from .scenes import LABEL_HOP_S, FoaClip, LabelGrid

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 8
    segment_len_s: float = 5.0
    segment_overlap: float = 0.8
    lr_initial: float = 5e-4
    lr_after: float = 1e-4
    lr_drop_epoch: int | None = None  # default scales the 60-of-80 breakpoint
    seed: int = 0
    single_thread: bool = False

    def __post_init__(self):
        if not 0.0 <= self.segment_overlap < 1.0:
            raise ValidationError("segment overlap must be in [0, 1)")
        if self.lr_initial <= 0 or self.lr_after <= 0:
            raise ValidationError("learning rates must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch size must be positive")
        if self.segment_len_s <= 0:
            raise ValidationError("segment length must be positive")

    @property
    def drop_epoch(self) -> int:
        if self.lr_drop_epoch is not None:
            return self.lr_drop_epoch
        return round(self.epochs * 60 / 80)

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "segment_len_s": self.segment_len_s,
            "segment_overlap": self.segment_overlap,
            "lr_initial": self.lr_initial,
            "lr_after": self.lr_after,
            "lr_drop_epoch": self.lr_drop_epoch,
            "seed": self.seed,
            "single_thread": self.single_thread,
        }


def lr_for_epoch(config: TrainConfig, epoch: int) -> float:
    """Learning rate of a 0-based epoch index."""
    return config.lr_initial if epoch < config.drop_epoch else config.lr_after


# ---------------------------------------------------------------------------
# Dataset and segmentation
# ---------------------------------------------------------------------------

@dataclass
class ClipRecord:
    clip_id: str
    clip: FoaClip
    grid: LabelGrid


def load_dataset_dir(path, n_track: int = 2, n_classes: int | None = None) -> list[ClipRecord]:
    """Read a dataset directory of ``foa/*.wav`` + ``labels/*.csv`` pairs."""
    path = Path(path)
    wavs = sorted((path / "foa").glob("*.wav"))
    if not wavs:
        raise ValidationError(f"no WAV clips under {path}/foa")
    records = []
    for wav in wavs:
        clip = read_wav(wav)
        label_path = path / "labels" / (wav.stem + ".csv")
        if not label_path.exists():
            raise ValidationError(f"missing label file {label_path}")
        n_frames = int(round(clip.duration_s / LABEL_HOP_S))
        grid = read_labels(label_path, n_frames=n_frames, n_track=n_track, n_classes=n_classes)
        records.append(ClipRecord(wav.stem, clip, grid))
    return records


def segment_count(n_frames: int, seg_frames: int, hop_frames: int) -> int:
    """Number of segments covering a clip of ``n_frames`` label frames."""
    if n_frames <= seg_frames:
        return 1
    full = (n_frames - seg_frames) // hop_frames + 1
    return full + (1 if (n_frames - seg_frames) % hop_frames else 0)


@dataclass
class Segment:
    clip_id: str
    start_frame: int
    audio: np.ndarray  # (4, seg_samples), zero-padded at the tail
    grid: LabelGrid    # seg_frames long, silence-padded


def segment_clips(
    records: list[ClipRecord],
    segment_len_s: float = 5.0,
    overlap: float = 0.8,
    label_hop_s: float = LABEL_HOP_S,
) -> list[Segment]:
    segments = []
    seg_frames = int(round(segment_len_s / label_hop_s))
    hop_frames = max(1, int(round(seg_frames * (1.0 - overlap))))
    for rec in records:
        sr = rec.clip.sample_rate_hz
        block = int(round(label_hop_s * sr))
        n_frames = rec.grid.n_frames
        count = segment_count(n_frames, seg_frames, hop_frames)
        for i in range(count):
            start = i * hop_frames
            stop = start + seg_frames
            audio = np.zeros((4, seg_frames * block))
            src = rec.clip.samples[:, start * block : min(stop * block, rec.clip.n_samples)]
            audio[:, : src.shape[1]] = src
            grid = LabelGrid.silent(seg_frames, rec.grid.n_track, label_hop_s)
            avail = min(stop, n_frames) - start
            if avail > 0:
                grid.active[:avail] = rec.grid.active[start : start + avail]
                grid.class_id[:avail] = rec.grid.class_id[start : start + avail]
                grid.azimuth[:avail] = rec.grid.azimuth[start : start + avail]
                grid.elevation[:avail] = rec.grid.elevation[start : start + avail]
            segments.append(Segment(rec.clip_id, start, audio, grid))
    return segments


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainReport:
    epochs: list[dict] = field(default_factory=list)
    checkpoint_path: str = ""
    parameter_count: int = 0
    wall_time_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "checkpoint_path": self.checkpoint_path,
            "parameter_count": self.parameter_count,
            "wall_time_s": self.wall_time_s,
        }


def _prepare_batches(
    records: list[ClipRecord],
    model_config: ModelConfig,
    config: TrainConfig,
    dtype: torch.dtype,
) -> tuple[torch.Tensor, FrameTargets]:
    """Feature/target tensors for every segment, cached up front (desk-scale
    datasets fit in memory many times over)."""
    segments = segment_clips(records, config.segment_len_s, config.segment_overlap)
    sr = records[0].clip.sample_rate_hz
    fb = MelFilterbank.build(sr, n_mels=model_config.n_mels)
    feats = []
    targets = []
    for seg in segments:
        ft = extract_features(FoaClip(seg.audio, sr), fb)
        feats.append(torch.from_numpy(ft.channels).to(dtype))
        targets.append(FrameTargets.from_grid(seg.grid, model_config.n_classes, dtype=dtype))
    return torch.stack(feats), FrameTargets.stack(targets)


def train(
    model_config: ModelConfig,
    config: TrainConfig,
    records: list[ClipRecord],
    out_dir,
    resume_from=None,
) -> TrainReport:
    """Train on the given clips; writes ``checkpoint.ckpt`` into ``out_dir``
    after every epoch and returns per-epoch loss rows.

    Aborts with :class:`TrainingError` (after dumping the offending batch to
    ``nonfinite_batch.npz``) if the loss stops being finite.
    """
    if not records:
        raise ValidationError("training needs a non-empty dataset")
    if config.single_thread:
        torch.set_num_threads(1)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "checkpoint.ckpt"

    dtype = torch.float32
    torch.manual_seed(config.seed)
    features, targets = _prepare_batches(records, model_config, config, dtype)
    n_segments = features.shape[0]

    start_epoch = 0
    rng = np.random.default_rng(config.seed)
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if ckpt.config != model_config:
            raise ValidationError("checkpoint model config does not match the requested one")
        model = ckpt.build_model(dtype)
        optimizer = torch.optim.Adam(model.parameters(), lr=config.lr_initial,
                                     betas=ADAM_BETAS, eps=ADAM_EPS)
        if ckpt.optimizer_state is not None:
            optimizer.load_state_dict(ckpt.optimizer_state)
        start_epoch = int(ckpt.extra.get("epochs_completed", 0))
        rng_state = ckpt.extra.get("rng_state")
        if rng_state is not None:
            rng.bit_generator.state = json.loads(rng_state)
    else:
        model = init_model(model_config, config.seed).to(dtype)
        optimizer = torch.optim.Adam(model.parameters(), lr=config.lr_initial,
                                     betas=ADAM_BETAS, eps=ADAM_EPS)

    report = TrainReport(parameter_count=sum(p.numel() for p in model.parameters()))
    t_start = time.perf_counter()

    for epoch in range(start_epoch, config.epochs):
        lr = lr_for_epoch(config, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        model.train()
        order = rng.permutation(n_segments)
        sums = {"tpit": 0.0, "sed": 0.0, "ead": 0.0, "doa_num": 0.0, "mask": 0.0}
        n_frames_total = 0
        t_epoch = time.perf_counter()
        for i in range(0, n_segments, config.batch_size):
            idx = torch.from_numpy(order[i : i + config.batch_size]).long()
            batch_targets = FrameTargets(
                targets.class_idx[idx], targets.ead[idx], targets.doa[idx], targets.n_classes
            )
            outputs = model(features[idx])
            breakdown = tpit_loss(outputs, batch_targets)
            loss = breakdown.total_tpit / breakdown.n_frames
            if not torch.isfinite(loss):
                dump = out_dir / "nonfinite_batch.npz"
                np.savez(
                    dump,
                    segment_indices=order[i : i + config.batch_size],
                    features=features[idx].numpy(),
                )
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, step {i // config.batch_size}; "
                    f"offending batch dumped to {dump}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            sums["tpit"] += float(breakdown.total_tpit)
            sums["sed"] += float(breakdown.total_sed)
            sums["ead"] += float(breakdown.total_ead)
            sums["doa_num"] += float(breakdown.total_doa) * float(breakdown.mask_total)
            sums["mask"] += float(breakdown.mask_total)
            n_frames_total += breakdown.n_frames

        row = {
            "epoch": epoch,
            "lr": lr,
            "tpit": sums["tpit"] / n_frames_total,
            "sed": sums["sed"] / n_frames_total,
            "ead": sums["ead"] / n_frames_total,
            "doa": sums["doa_num"] / sums["mask"] if sums["mask"] > 0 else 0.0,
            "seconds": time.perf_counter() - t_epoch,
        }
        report.epochs.append(row)
        save_checkpoint(
            ckpt_path,
            model,
            optimizer=optimizer,
            extra={
                "epochs_completed": epoch + 1,
                "train_config": config.to_dict(),
                "rng_state": json.dumps(rng.bit_generator.state),
            },
        )

    report.checkpoint_path = str(ckpt_path)
    report.wall_time_s = time.perf_counter() - t_start
    return report


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------

TINY_GRAD_CONFIG = ModelConfig(
    n_classes=2, n_mels=16, conv_channels=(2, 3), gru_hidden=4, gru_layers=1
)


def check_gradients(loss_fn, params: list[torch.Tensor], h: float = 1e-5) -> np.ndarray:
    """Max relative error of autograd vs central finite differences, per
    parameter tensor. ``loss_fn`` must be a pure function of ``params``.

    The relative denominator is floored at 1e-5: finite differences of an
    O(1) loss carry ~1e-10 absolute roundoff, which would otherwise register
    as spurious error on near-zero gradients.
    """
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    errors = np.zeros(len(params))
    with torch.no_grad():
        for pi, (param, grad) in enumerate(zip(params, grads)):
            grad = torch.zeros_like(param) if grad is None else grad
            flat = param.view(-1)
            worst = 0.0
            for j in range(flat.numel()):
                orig = float(flat[j])
                flat[j] = orig + h
                up = float(loss_fn())
                flat[j] = orig - h
                down = float(loss_fn())
                flat[j] = orig
                fd = (up - down) / (2 * h)
                ad = float(grad.view(-1)[j])
                worst = max(worst, abs(ad - fd) / max(abs(ad), abs(fd), 1e-5))
            errors[pi] = worst
    return errors


@dataclass
class GradCheckReport:
    per_parameter: dict[str, float]
    max_rel_error: float
    threshold: float
    n_parameters: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.threshold

    def worst_by_layer(self) -> dict[str, float]:
        layers: dict[str, float] = {}
        for name, err in self.per_parameter.items():
            layer = name.rsplit(".", 1)[0]
            layers[layer] = max(layers.get(layer, 0.0), err)
        return layers


def grad_check(
    model_config: ModelConfig | None = None,
    seed: int = 0,
    h: float = 1e-5,
    threshold: float = 1e-4,
    n_stft_frames: int = 20,
) -> GradCheckReport:
    """Finite-difference check of the full pipeline gradient (conv, batch
    norm, pooling, GRU, linear, softmax-CE, sigmoid-BCE, masked DoA terms) on
    a tiny f64 model."""
    cfg = model_config or TINY_GRAD_CONFIG
    model = init_model(cfg, seed).double()
    model.train()
    n_params = sum(p.numel() for p in model.parameters())
    if n_params > 5000:
        raise ValidationError(f"gradient check model has {n_params} parameters (> 5000)")

    rng = np.random.default_rng(seed)
    feats = torch.from_numpy(rng.standard_normal((1, 7, n_stft_frames, cfg.n_mels)))
    t_label = math.ceil(n_stft_frames / cfg.time_pool)
    active = rng.random((1, t_label, cfg.n_track)) < 0.7
    cls = rng.integers(0, cfg.n_classes, (1, t_label, cfg.n_track))
    cls[~active] = cfg.n_classes
    doa = rng.uniform(-math.pi, math.pi, (1, t_label, cfg.n_track, 2))
    doa[..., 1] /= 2
    doa[~active] = 0.0
    targets = FrameTargets(
        torch.from_numpy(cls).long(),
        torch.from_numpy(active.astype(float)),
        torch.from_numpy(doa),
        cfg.n_classes,
    )

    def loss_fn():
        breakdown = tpit_loss(model(feats), targets)
        return breakdown.total_tpit / breakdown.n_frames

    names = [n for n, _ in model.named_parameters()]
    params = [p for _, p in model.named_parameters()]
    errors = check_gradients(loss_fn, params, h)
    per_param = dict(zip(names, errors.tolist()))
    return GradCheckReport(per_param, float(errors.max()), threshold, n_params)
