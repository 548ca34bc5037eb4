"""Encoder -> sampler -> decoder composition."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ops
from .decoder import Decoder, DecoderConfig, HierarchySpec
from .encoder import Encoder, EncoderConfig
from .nn import Module
from .sampler import EXTRA_CHANNELS, FeatureMap, query_grid, render
from .spectral import spectral_resize, spectral_resize_op
from .tensor import DiffTensor


@dataclass
class ModelConfig:
    channels: int = 1
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    hierarchy: HierarchySpec = field(default_factory=HierarchySpec)
    lift_hidden: int = 64
    proj_hidden: int = 64
    activation: str = "gelu"
    residual: bool = False  # predict a correction on top of the spectral resize of the input

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(
            in_channels=4 * self.encoder.channels + EXTRA_CHANNELS,
            out_channels=self.channels,
            lift_hidden=self.lift_hidden,
            proj_hidden=self.proj_hidden,
            activation=self.activation,
            hierarchy=self.hierarchy,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        enc = EncoderConfig(**d.pop("encoder", {}))
        hier = HierarchySpec(**d.pop("hierarchy", {}))
        return cls(encoder=enc, hierarchy=hier, **d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


class HiNOTE(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        if cfg.encoder.in_channels != cfg.channels:
            cfg.encoder.in_channels = cfg.channels
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(cfg.encoder, rng)
        self.decoder = Decoder(cfg.decoder_config(), rng)

    def forward(self, lr, extents, base=None) -> DiffTensor:
        """(B, c, h, w) LR batch -> (B, c, H, W) prediction on an ``extents`` grid.

        In residual mode ``base`` (default: spectral resize of ``lr``) is added
        to the decoder output.
        """
        lr = ops.constant(lr)
        z = self.encoder(lr)
        feats = render(FeatureMap(z), query_grid(extents))
        out = self.decoder(feats.features)
        if self.cfg.residual:
            if base is None:
                base = spectral_resize_op(lr, tuple(extents))
            out = ops.add(out, base)
        return out

    def predict(self, lr: np.ndarray, extents) -> np.ndarray:
        """Inference on plain arrays, (c, h, w) or (B, c, h, w); no tape."""
        lr = np.asarray(lr, dtype=self.encoder.up.spatial.weight.dtype)
        single = lr.ndim == 3
        if single:
            lr = lr[None]
        out = self.forward(lr, tuple(int(e) for e in extents)).data
        return out[0] if single else out

    def baseline(self, lr: np.ndarray, extents) -> np.ndarray:
        return spectral_resize(lr, tuple(extents))
