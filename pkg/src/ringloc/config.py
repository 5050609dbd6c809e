"""Pipeline configuration with strict key validation."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError
from .features import GridConfig
from .scan_io import GroundMode, PreprocessConfig

FEATURE_MODES = ("occupancy", "table1_six")


@dataclass(frozen=True)
class IcpConfig:
    max_corr_dist: float = 1.5
    max_iters: int = 100
    eps: float = 1e-6
    voxel_size: float = 0.4
    accept_fitness: float = 0.5

    def __post_init__(self):
        if not self.max_corr_dist > 0 or self.max_iters < 1 or not self.eps > 0:
            raise ValueError("icp: max_corr_dist > 0, max_iters >= 1, eps > 0 required")
        if self.voxel_size < 0 or not 0 <= self.accept_fitness <= 1:
            raise ValueError("icp: voxel_size >= 0 and accept_fitness in [0, 1] required")


@dataclass(frozen=True)
class PipelineConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    features: str = "table1_six"
    entropy_normalized: bool = True
    k_neighbors: int = 30
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    top_k: int = 1
    accept_threshold: float = 0.975
    icp: IcpConfig = field(default_factory=IcpConfig)
    run_icp: bool = True
    subpixel: bool = True

    def __post_init__(self):
        if self.features not in FEATURE_MODES:
            raise ValueError(f"features must be one of {FEATURE_MODES}")
        if self.k_neighbors < 3:
            raise ValueError("k_neighbors must be >= 3")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if not -1.0 <= self.accept_threshold <= 1.0:
            raise ValueError("accept_threshold must lie in [-1, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["preprocess"]["ground_mode"] = self.preprocess.ground_mode.value
        return d

    def representation_dict(self) -> dict:
        """The subset of settings that determines stored index tensors."""
        d = self.to_dict()
        return {k: d[k] for k in ("grid", "features", "entropy_normalized", "k_neighbors", "preprocess")}

    def representation_hash(self) -> str:
        blob = json.dumps(self.representation_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def replace(self, **changes) -> PipelineConfig:
        d = self.to_dict()
        for k, v in changes.items():
            d[k] = v.to_dict() if isinstance(v, PipelineConfig) else (asdict(v) if is_dataclass(v) else v)
        return config_from_dict(d)


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    nested = {"grid": GridConfig, "preprocess": PreprocessConfig, "icp": IcpConfig}
    for key, value in data.items():
        if cls is PipelineConfig and key in nested:
            value = _build(nested[key], value, f"{where}.{key}")
        elif key == "ground_mode":
            try:
                value = GroundMode(value)
            except ValueError:
                raise ConfigError(f"{where}.ground_mode: invalid value {value!r}") from None
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(data: dict) -> PipelineConfig:
    return _build(PipelineConfig, data or {}, "config")


def load_config(path) -> PipelineConfig:
    """Read a YAML (or JSON) config file; unknown keys are rejected."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data or {})


def save_config(cfg: PipelineConfig, path) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    return path
