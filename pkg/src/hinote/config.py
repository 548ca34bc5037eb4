"""Run configuration files (TOML)."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .datagen import GRFSpec, TurbSpec
from .decoder import HierarchySpec
from .encoder import EncoderConfig
from .model import ModelConfig
from .trainer import TrainConfig

SECTIONS = ("data", "grf", "turb", "splits", "encoder", "decoder", "hierarchy", "loss", "train", "eval")


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    source: str = "grf"
    seed: int = 0
    degrade: str = "spectral"


@dataclass
class EvalConfig:
    scales: list = field(default_factory=lambda: [3.0])


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    grf: GRFSpec = field(default_factory=GRFSpec)
    turb: TurbSpec = field(default_factory=TurbSpec)
    splits: dict = field(default_factory=lambda: {"train": 70, "valid": 20, "test": 10})
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


# [loss] keys map onto TrainConfig fields
_LOSS_KEYS = {"mode": "loss", "alpha": "alpha", "beta": "beta", "alpha_b": "alpha_b",
              "beta_b": "beta_b", "split_step": "split_step", "prior_scale": "prior_scale"}
_DECODER_KEYS = ("lift_hidden", "proj_hidden", "activation", "residual")


def _fill(obj, table: dict, section: str, rename: dict | None = None):
    names = {f.name for f in dataclasses.fields(obj)}
    updates = {}
    for key, value in table.items():
        target = rename.get(key, None) if rename is not None else key
        if target is None or target not in names:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        updates[target] = value
    return dataclasses.replace(obj, **updates)


def parse_config(text: str) -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    for sec in raw:
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
    cfg = RunConfig()
    cfg.data = _fill(cfg.data, raw.get("data", {}), "data")
    cfg.grf = _fill(cfg.grf, raw.get("grf", {}), "grf")
    cfg.turb = _fill(cfg.turb, raw.get("turb", {}), "turb")
    splits = raw.get("splits", {})
    for key in splits:
        if key not in ("train", "valid", "test"):
            raise ConfigError(f"unknown key {key!r} in [splits]")
    cfg.splits = {**cfg.splits, **splits}
    enc = _fill(EncoderConfig(), raw.get("encoder", {}), "encoder")
    hier = _fill(HierarchySpec(), raw.get("hierarchy", {}), "hierarchy")
    dec = raw.get("decoder", {})
    for key in dec:
        if key not in _DECODER_KEYS:
            raise ConfigError(f"unknown key {key!r} in [decoder]")
    cfg.model = ModelConfig(channels=enc.in_channels, encoder=enc, hierarchy=hier, **dec)
    tr = _fill(cfg.train, raw.get("train", {}), "train")
    cfg.train = _fill(tr, raw.get("loss", {}), "loss", _LOSS_KEYS)
    cfg.eval = _fill(cfg.eval, raw.get("eval", {}), "eval")
    try:
        cfg.grf.validate()
        cfg.model.encoder.validate()
        cfg.model.decoder_config().validate()
        hr_extent = cfg.grf.n if cfg.data.source == "grf" else cfg.turb.n
        cfg.train.validate(hr_extent)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text())


def bundled_config_text(name: str = "desk") -> str:
    return resources.files("hinote").joinpath("configs", f"{name}.toml").read_text()


def bundled_config(name: str = "desk") -> RunConfig:
    return parse_config(bundled_config_text(name))
