"""Two-branch track-wise network producing SED, EAD, and DoA outputs.

The SED branch sees the 4 log-mel channels, the DoA branch all 7 feature
channels. Each branch stacks conv blocks (two 3x3 convs with batch norm and
ReLU, then average pooling), time-pooling once by the label-rate factor and
halving frequency per block, followed by a bidirectional GRU. The EAD head
runs its own GRU on the concatenated branch embeddings, tying the tracks of
both branches together. Heads per label frame and track:

* SED: logits over n_classes + 1 (last index = silence)
* EAD: activity probability in (0, 1)
* DoA: unconstrained (azimuth, elevation) regression in radians
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import ValidationError

EAD_CLAMP = 1e-7


@dataclass
class ModelConfig:
    n_classes: int
    n_track: int = 2
    n_mels: int = 64
    conv_channels: tuple[int, ...] = (16, 32, 64, 128)
    gru_hidden: int = 64
    gru_layers: int = 2
    time_pool: int = 5
    freq_pool: int = 2

    def __post_init__(self):
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        if self.n_classes < 1:
            raise ValidationError("need at least one event class")
        if self.n_track < 2:
            raise ValidationError("track-wise output needs n_track >= 2")
        if len(self.conv_channels) == 0 or any(c < 1 for c in self.conv_channels):
            raise ValidationError("conv_channels must name at least one positive width")
        if self.gru_hidden < 1 or self.gru_layers < 1:
            raise ValidationError("recurrent stack must have positive size")
        if self.time_pool < 1:
            raise ValidationError("time_pool must be >= 1")
        down = self.freq_pool ** len(self.conv_channels)
        if self.n_mels % down != 0:
            raise ValidationError(
                f"n_mels={self.n_mels} not divisible by total frequency pooling {down}"
            )

    @property
    def embed_dim(self) -> int:
        return self.conv_channels[-1] * (self.n_mels // self.freq_pool ** len(self.conv_channels))

    def to_dict(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "n_track": self.n_track,
            "n_mels": self.n_mels,
            "conv_channels": list(self.conv_channels),
            "gru_hidden": self.gru_hidden,
            "gru_layers": self.gru_layers,
            "time_pool": self.time_pool,
            "freq_pool": self.freq_pool,
        }


@dataclass
class TrackOutputs:
    """Per-frame, per-track network outputs (leading batch axis)."""

    sed_logits: torch.Tensor  # (B, T, n_track, n_classes + 1)
    ead_prob: torch.Tensor    # (B, T, n_track), strictly inside (0, 1)
    doa: torch.Tensor         # (B, T, n_track, 2) radians, unconstrained

    @property
    def n_frames(self) -> int:
        return self.sed_logits.shape[1]

    @property
    def n_track(self) -> int:
        return self.sed_logits.shape[2]


class ConvBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, pool: tuple[int, int]):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(c_out)
        self.pool = nn.AvgPool2d(pool)

    def forward(self, x):
        x = torch.relu(self.bn1(self.conv1(x)))
        x = torch.relu(self.bn2(self.conv2(x)))
        return self.pool(x)


class _Branch(nn.Module):
    """Conv stack over (time, mel); time pooled once, frequency per block."""

    def __init__(self, c_in: int, cfg: ModelConfig):
        super().__init__()
        blocks = []
        for i, c_out in enumerate(cfg.conv_channels):
            pool = (cfg.time_pool if i == 0 else 1, cfg.freq_pool)
            blocks.append(ConvBlock(c_in, c_out, pool))
            c_in = c_out
        self.blocks = nn.Sequential(*blocks)

    def forward(self, x):  # (B, C, T, K) -> (B, T', embed)
        x = self.blocks(x)
        b, c, t, k = x.shape
        return x.permute(0, 2, 1, 3).reshape(b, t, c * k)


class _RecurrentHead(nn.Module):
    def __init__(self, in_dim: int, out_dim: int, cfg: ModelConfig):
        super().__init__()
        self.gru = nn.GRU(
            in_dim, cfg.gru_hidden, num_layers=cfg.gru_layers,
            batch_first=True, bidirectional=True,
        )
        self.fc = nn.Linear(2 * cfg.gru_hidden, out_dim)

    def forward(self, x):
        y, _ = self.gru(x)
        return self.fc(y)


class TrackSeldModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.sed_branch = _Branch(4, config)
        self.doa_branch = _Branch(7, config)
        e = config.embed_dim
        self.sed_head = _RecurrentHead(e, config.n_track * (config.n_classes + 1), config)
        self.doa_head = _RecurrentHead(e, config.n_track * 2, config)
        self.ead_head = _RecurrentHead(2 * e, config.n_track, config)

    def forward(self, features: torch.Tensor) -> TrackOutputs:
        """features: (B, 7, T, K) or (7, T, K); T is edge-replicated up to a
        multiple of the time pool so output frames = ceil(T / time_pool)."""
        if features.dim() == 3:
            features = features.unsqueeze(0)
        cfg = self.config
        if features.shape[1] != 7 or features.shape[3] != cfg.n_mels:
            raise ValidationError(
                f"expected features (B, 7, T, {cfg.n_mels}), got {tuple(features.shape)}"
            )
        pad = (-features.shape[2]) % cfg.time_pool
        if pad:
            features = torch.cat([features, features[:, :, -1:].expand(-1, -1, pad, -1)], dim=2)

        sed_emb = self.sed_branch(features[:, :4])
        doa_emb = self.doa_branch(features)
        b, t, _ = sed_emb.shape

        sed = self.sed_head(sed_emb).view(b, t, cfg.n_track, cfg.n_classes + 1)
        doa = self.doa_head(doa_emb).view(b, t, cfg.n_track, 2)
        ead = torch.sigmoid(self.ead_head(torch.cat([sed_emb, doa_emb], dim=-1)))
        ead = ead.clamp(EAD_CLAMP, 1.0 - EAD_CLAMP)
        return TrackOutputs(sed, ead, doa)


def init_model(config: ModelConfig, rng_seed: int = 0) -> TrackSeldModel:
    """Build a model with deterministic initialization: weights uniform in
    +-1/sqrt(fan_in) from a seeded PCG64 stream, biases zero, norm scales one.
    Independent of torch's global RNG."""
    model = TrackSeldModel(config)
    rng = np.random.default_rng(np.random.PCG64(rng_seed))
    with torch.no_grad():
        for name, param in model.named_parameters():
            if param.dim() >= 2:
                fan_in = int(np.prod(param.shape[1:]))
                bound = 1.0 / np.sqrt(fan_in)
                values = rng.uniform(-bound, bound, size=tuple(param.shape))
                param.copy_(torch.from_numpy(values))
            elif "bn" in name and name.endswith("weight"):
                param.fill_(1.0)
            else:
                param.zero_()
    return model


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def expected_parameter_count(cfg: ModelConfig) -> int:
    """Closed-form parameter total for the architecture above; used by tests
    as an independent check on the built graph."""
    def conv(cin, cout):
        return cout * cin * 9 + cout

    def bn(c):
        return 2 * c

    def branch(cin):
        total = 0
        for cout in cfg.conv_channels:
            total += conv(cin, cout) + bn(cout) + conv(cout, cout) + bn(cout)
            cin = cout
        return total

    def gru_head(in_dim, out_dim):
        h = cfg.gru_hidden
        total = 0
        for layer in range(cfg.gru_layers):
            d = in_dim if layer == 0 else 2 * h
            per_direction = 3 * h * d + 3 * h * h + 6 * h
            total += 2 * per_direction
        return total + (2 * h * out_dim + out_dim)

    e = cfg.embed_dim
    return (
        branch(4)
        + branch(7)
        + gru_head(e, cfg.n_track * (cfg.n_classes + 1))
        + gru_head(e, cfg.n_track * 2)
        + gru_head(2 * e, cfg.n_track)
    )
