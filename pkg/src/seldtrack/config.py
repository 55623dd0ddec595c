"""One JSON run configuration for the whole pipeline, with CLI overrides.

Sections: ``scene`` (dataset synthesis), ``features``, ``model``, ``train``,
``metrics``, plus a top-level ``seed``. Unknown keys anywhere are rejected so
typos fail loudly; every command writes the resolved configuration next to
its outputs for reproducibility.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ValidationError
from .metrics import MetricsConfig
from .model import ModelConfig
from .training import TrainConfig


@dataclass
class SceneConfig:
    n_clips: int = 24
    n_classes: int = 3
    n_track: int = 2
    clip_len_s: float = 8.0
    sample_rate_hz: int = 24000
    noise_snr_db: float | None = None
    min_separation_deg: float = 60.0
    preset: str = "overfit"

    def __post_init__(self):
        if self.n_clips < 1 or self.n_classes < 1:
            raise ValidationError("scene needs at least one clip and one class")
        if self.clip_len_s <= 0 or self.sample_rate_hz <= 0:
            raise ValidationError("clip length and sample rate must be positive")
        if self.preset not in ("overfit",):
            raise ValidationError(f"unknown scene preset {self.preset!r}")


@dataclass
class FeatureConfig:
    n_mels: int = 64
    f_min_hz: float = 50.0


@dataclass
class ModelSection:
    """Model widths; n_classes and n_mels are inherited from scene/features."""

    n_track: int = 2
    conv_channels: tuple[int, ...] = (8, 16, 32, 64)
    gru_hidden: int = 64
    gru_layers: int = 2
    time_pool: int = 5
    freq_pool: int = 2


def _build(cls, data: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValidationError(f"unknown key(s) in '{section}': {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ValidationError(f"bad '{section}' section: {exc}") from exc


@dataclass
class RunConfig:
    seed: int = 0
    scene: SceneConfig = field(default_factory=SceneConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    SECTIONS = {
        "scene": SceneConfig,
        "features": FeatureConfig,
        "model": ModelSection,
        "train": TrainConfig,
        "metrics": MetricsConfig,
    }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        unknown = set(data) - set(cls.SECTIONS) - {"seed"}
        if unknown:
            raise ValidationError(f"unknown top-level key(s): {sorted(unknown)}")
        kwargs = {"seed": int(data.get("seed", 0))}
        for name, section_cls in cls.SECTIONS.items():
            kwargs[name] = _build(section_cls, dict(data.get(name, {})), name)
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ValidationError(f"{path}: top level must be a JSON object")
        return cls.from_dict(data)

    def apply_overrides(self, overrides: dict) -> "RunConfig":
        """Merge dotted-path overrides (e.g. ``{"train.epochs": 10}``) on top
        of this configuration; None values are ignored."""
        data = self.to_dict()
        for key, value in overrides.items():
            if value is None:
                continue
            if "." in key:
                section, name = key.split(".", 1)
                data.setdefault(section, {})[name] = value
            else:
                data[key] = value
        return RunConfig.from_dict(data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["model"]["conv_channels"] = list(self.model.conv_channels)
        return out

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            n_classes=self.scene.n_classes,
            n_mels=self.features.n_mels,
            n_track=self.model.n_track,
            conv_channels=self.model.conv_channels,
            gru_hidden=self.model.gru_hidden,
            gru_layers=self.model.gru_layers,
            time_pool=self.model.time_pool,
            freq_pool=self.model.freq_pool,
        )

    def write_resolved(self, out_dir) -> Path:
        path = Path(out_dir) / "resolved_config.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig.from_json(path) if path else RunConfig()
    if overrides:
        cfg = cfg.apply_overrides(overrides)
    return cfg
