"""Experiment configuration: one JSON file drives every CLI verb."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..decoder.online import OnlineConfig
from ..decoder.refine import RefineConfig
from ..dynamics.train import DynamicsTrainConfig
from ..renderer.train import RendererTrainConfig
from ..scenesim.dataset import GenSpec

DATA_ENV = "PERMAPHYS_DATA"


class ConfigError(ValueError):
    """Malformed experiment config."""


@dataclass
class EvalConfig:
    horizons: list[int] = field(default_factory=lambda: [5, 10])
    following_lengths: list[int] = field(default_factory=lambda: [5, 10, 30])
    following_threshold: float = 20.0      # world units, smallest ball diameter
    following_videos: int = 40
    pixel_videos: int = 40
    rollout_videos: int = 80
    workers: int = 2

    def __post_init__(self):
        if any(h <= 0 for h in self.horizons):
            raise ConfigError("eval horizons must be positive")


@dataclass
class ExperimentConfig:
    data_root: str = ""
    out_dir: str = "out"
    seed: int = 0
    gen: GenSpec = field(default_factory=GenSpec)
    counts: dict = field(default_factory=lambda: {
        "renderer": 100, "dynamics": 500, "eval": 100, "plaus_pairs": 50})
    renderer_train: RendererTrainConfig = field(default_factory=RendererTrainConfig)
    dynamics_train: DynamicsTrainConfig = field(default_factory=DynamicsTrainConfig)
    decode: RefineConfig = field(default_factory=RefineConfig)
    online: OnlineConfig = field(default_factory=OnlineConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if not self.data_root:
            self.data_root = os.environ.get(DATA_ENV, str(Path(self.out_dir) / "dataset"))

    @property
    def checkpoint_dir(self) -> Path:
        return Path(self.out_dir) / "checkpoints"

    @property
    def metrics_dir(self) -> Path:
        return Path(self.out_dir) / "metrics"

    def to_json(self) -> dict:
        d = asdict(self)
        return d

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()[:16]


_SECTION_TYPES = {
    "gen": GenSpec,
    "renderer_train": RendererTrainConfig,
    "dynamics_train": DynamicsTrainConfig,
    "decode": RefineConfig,
    "online": OnlineConfig,
    "eval": EvalConfig,
}


def config_from_dict(raw: dict) -> ExperimentConfig:
    kwargs = {}
    for key, value in raw.items():
        if key in _SECTION_TYPES:
            cls = _SECTION_TYPES[key]
            try:
                kwargs[key] = cls(**value)
            except TypeError as e:
                raise ConfigError(f"bad '{key}' section: {e}") from e
        elif key in ("data_root", "out_dir", "seed", "counts"):
            kwargs[key] = value
        else:
            raise ConfigError(f"unknown config key '{key}'")
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def load_config(path: str | Path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    return config_from_dict(raw)
