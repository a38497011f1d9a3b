"""Run configuration: nested dataclasses, YAML files, and dotted-key overrides.

Every key in the YAML file maps 1:1 onto a dataclass field; unrecognized keys
are rejected so typos in ablation switches fail loudly instead of silently
running the wrong experiment.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    """Raised for unknown keys or invalid values in a run configuration."""


@dataclass
class ModelConfig:
    trunk: str = "vgg16_truncated"
    pretrained_path: str | None = None
    branch_channels: int = 32
    fuse_stages: list[int] = field(default_factory=lambda: [1, 2, 3])
    num_vertices: int = 16
    gcn_pool: int = 4
    adjacency_init_std: float = 1e-3
    # structural ablation switches
    aux_cs: bool = True
    aux_ds: bool = True
    adaptive: bool = True
    use_gcn: bool = True


@dataclass
class DataConfig:
    train_manifest: str = ""
    val_manifest: str = ""
    test_manifest: str = ""
    sigma: float = 4.0
    levels: int = 4
    crop_size: int = 128
    flip_p: float = 0.3
    level_norm: str = "per_crop"
    density_scale: float = 1.0


@dataclass
class OptimConfig:
    optimizer: str = "adam"
    lr: float = 1e-4
    lr_min: float = 0.0
    schedule: str = "cosine"
    epochs: int = 50
    batch_size: int = 8
    weight_decay: float = 0.0
    seed: int = 0
    num_workers: int = 0


@dataclass
class LossConfig:
    gamma: float = 2.0
    dcd_dilation: int = 2
    dcd_reduction: str = "mean"
    no_dcd: bool = False
    no_lcs: bool = False
    no_lds: bool = False


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    out_dir: str = "runs/default"
    val_every: int = 1
    log_every: int = 10

    def validate(self) -> "RunConfig":
        if self.optim.lr <= 0:
            raise ConfigError(f"optim.lr must be > 0, got {self.optim.lr}")
        if self.optim.lr_min < 0:
            raise ConfigError(f"optim.lr_min must be >= 0, got {self.optim.lr_min}")
        if self.optim.epochs < 1:
            raise ConfigError(f"optim.epochs must be >= 1, got {self.optim.epochs}")
        if self.optim.batch_size < 1:
            raise ConfigError(f"optim.batch_size must be >= 1, got {self.optim.batch_size}")
        if self.optim.schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown optim.schedule {self.optim.schedule!r}")
        if self.optim.optimizer not in ("adam",):
            raise ConfigError(f"unknown optim.optimizer {self.optim.optimizer!r}")
        if self.data.sigma <= 0:
            raise ConfigError(f"data.sigma must be > 0, got {self.data.sigma}")
        if self.data.levels < 1:
            raise ConfigError(f"data.levels must be >= 1, got {self.data.levels}")
        if self.data.level_norm not in ("per_crop", "per_image"):
            raise ConfigError(f"unknown data.level_norm {self.data.level_norm!r}")
        if self.data.density_scale <= 0:
            raise ConfigError("data.density_scale must be > 0")
        if self.loss.dcd_reduction not in ("mean", "sum"):
            raise ConfigError(f"unknown loss.dcd_reduction {self.loss.dcd_reduction!r}")
        if self.loss.dcd_dilation < 1:
            raise ConfigError("loss.dcd_dilation must be >= 1")
        if self.model.branch_channels < 1:
            raise ConfigError("model.branch_channels must be >= 1")
        if self.model.gcn_pool < 1:
            raise ConfigError("model.gcn_pool must be >= 1")
        if self.model.num_vertices < 1:
            raise ConfigError("model.num_vertices must be >= 1")
        if len(self.model.fuse_stages) < 2:
            raise ConfigError("model.fuse_stages needs at least 2 stages to fuse")
        if self.model.use_gcn and not (self.model.aux_cs and self.model.aux_ds):
            raise ConfigError(
                "model.use_gcn needs both auxiliary branches "
                "(the reasoning module consumes their predictions)"
            )
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {"model": ModelConfig, "data": DataConfig, "optim": OptimConfig, "loss": LossConfig}


def _build_section(cls: type, values: dict, prefix: str) -> Any:
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, val in values.items():
        if key not in known:
            raise ConfigError(f"unrecognized config key {prefix}{key!r}")
        kwargs[key] = val
    return cls(**kwargs)


def config_from_dict(raw: dict) -> RunConfig:
    raw = dict(raw or {})
    kwargs: dict[str, Any] = {}
    for name, cls in _SECTIONS.items():
        section = raw.pop(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"config section {name!r} must be a mapping")
        kwargs[name] = _build_section(cls, section, f"{name}.")
    top = {f.name for f in dataclasses.fields(RunConfig)} - set(_SECTIONS)
    for key, val in raw.items():
        if key not in top:
            raise ConfigError(f"unrecognized config key {key!r}")
        kwargs[key] = val
    return RunConfig(**kwargs).validate()


def load_config(path: str | Path) -> RunConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config file must contain a mapping")
    return config_from_dict(raw)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``section.key=value`` strings on top of a config.

    Values are parsed with YAML semantics, so ``--set model.use_gcn=false``
    and ``--set model.fuse_stages=[1,2,3]`` both do what they look like.
    """
    raw = cfg.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, text = item.split("=", 1)
        value = yaml.safe_load(text) if text != "" else ""
        node = raw
        parts = dotted.strip().split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unrecognized config key {dotted!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unrecognized config key {dotted!r}")
        node[parts[-1]] = value
    return config_from_dict(raw)
