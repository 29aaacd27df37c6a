"""Pipeline configuration (YAML) with validation and lossless round-trip."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .dataset import SplitConfig
from .detectors import ENSEMBLE_ORDER
from .orchestrate import AttemptPolicy
from .quality import QualityThresholds


class ConfigError(ValueError):
    pass


@dataclass
class TrainerPassThrough:
    """Forwarded verbatim to an external detector trainer; never interpreted here."""

    epochs: int = 1000
    batch: int = 32
    lr0: float = 0.01
    patience: int = 20
    imgsz: int = 512


@dataclass
class PipelineConfig:
    sources: str | None = None
    workdir: str = "work"
    dataset_root: str = "dataset"
    seed: int = 0
    canvas_size: int = 512
    buffer_factor: float = 1.15
    min_dim: int = 32
    fill_value: int = 128
    blur_sigma_fraction: float = 0.5
    invert_mask: bool = False
    images_per_seed: int = 1
    background_fraction: float = 0.1
    detectors: list[str] = field(default_factory=lambda: list(ENSEMBLE_ORDER))
    detector_backend: str = "fixture"
    vote_iou_threshold: float = 0.95
    calibration_limit: int | None = None
    thresholds: QualityThresholds = field(default_factory=QualityThresholds)
    iqa_provider: str = "mock"
    allow_skipped_scores: bool = False
    split: SplitConfig = field(default_factory=SplitConfig)
    attempts: AttemptPolicy = field(default_factory=AttemptPolicy)
    backend: str = "mock"
    backend_endpoint: str | None = None
    mock_mode: str = "always-smooth"
    mock_k: int = 0
    prompt_config: str | None = None
    workers: int = 1
    trainer: TrainerPassThrough = field(default_factory=TrainerPassThrough)

    _NESTED = {
        "thresholds": QualityThresholds,
        "split": SplitConfig,
        "attempts": AttemptPolicy,
        "trainer": TrainerPassThrough,
    }

    def validate(self, check_paths=False):
        checks = [
            (self.canvas_size >= 32, "canvas_size must be >= 32"),
            (self.buffer_factor > 1, "buffer_factor must be > 1"),
            (self.min_dim >= 1, "min_dim must be >= 1"),
            (0 <= self.fill_value <= 255, "fill_value must be in [0, 255]"),
            (self.blur_sigma_fraction >= 0, "blur_sigma_fraction must be >= 0"),
            (self.images_per_seed >= 1, "images_per_seed must be >= 1"),
            (0 <= self.background_fraction < 1, "background_fraction must be in [0, 1)"),
            (0 < self.vote_iou_threshold <= 1, "vote_iou_threshold must be in (0, 1]"),
            (self.workers >= 1, "workers must be >= 1"),
            (self.detector_backend in ("fixture", "torchvision"), "detector_backend must be fixture or torchvision"),
            (self.iqa_provider in ("mock", "pyiqa", "none"), "iqa_provider must be mock, pyiqa or none"),
            (self.backend in ("mock", "http"), "backend must be mock or http"),
            (len(self.detectors) >= 1, "at least one detector is required"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        if check_paths:
            for name in ("sources", "prompt_config"):
                value = getattr(self, name)
                if value is not None and not Path(value).exists():
                    raise ConfigError(f"{name} path does not exist: {value}")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data) -> "PipelineConfig":
        data = dict(data or {})
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            for key, typ in cls._NESTED.items():
                if key in data and not isinstance(data[key], typ):
                    sub = data[key] or {}
                    if not isinstance(sub, dict):
                        raise ConfigError(f"{key} must be a mapping")
                    sub_names = {f.name for f in dataclasses.fields(typ)}
                    if set(sub) - sub_names:
                        raise ConfigError(f"unknown keys in {key}: {sorted(set(sub) - sub_names)}")
                    data[key] = typ(**sub)
            if "detectors" in data:
                data["detectors"] = list(data["detectors"])
            cfg = cls(**data)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return cfg.validate()

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def loads(cls, text) -> "PipelineConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML: {exc}") from None
        if data is not None and not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.loads(Path(path).read_text(encoding="utf-8"))

    def save(self, path):
        Path(path).write_text(self.dumps(), encoding="utf-8")
