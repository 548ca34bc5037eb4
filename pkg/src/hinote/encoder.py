"""Convolutional encoder with hybrid (spatial + Fourier) upsampling at its onset."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .nn import Conv2d, Module
from .spectral import spectral_resize_op, zero_interleave_op
from .tensor import DiffTensor, ShapeError

UPSAMPLE_RATIOS = (1, 2, 4)


@dataclass
class EncoderConfig:
    in_channels: int = 1
    channels: int = 64
    blocks: int = 4
    upsample: int = 2
    activation: str = "gelu"
    bias: bool = True

    def validate(self) -> None:
        if self.upsample not in UPSAMPLE_RATIOS:
            raise ValueError(f"upsample ratio must be one of {UPSAMPLE_RATIOS}, got {self.upsample}")
        if self.channels < self.in_channels:
            raise ValueError("feature channels must be >= input channels")
        if self.activation not in ops.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


class HybridUpsample(Module):
    """Sum of a zero-stuffing + 3x3 conv branch and a spectral-resize + 1x1 conv branch.

    At ratio 1 both resampling steps are the identity and the module reduces
    to the two convolutions.
    """

    def __init__(self, c_in: int, c_out: int, ratio: int, rng, bias: bool = True):
        if ratio not in UPSAMPLE_RATIOS:
            raise ValueError(f"upsample ratio must be one of {UPSAMPLE_RATIOS}, got {ratio}")
        self.ratio = ratio
        self.spatial = Conv2d(c_in, c_out, 3, rng, bias=bias)
        self.fourier = Conv2d(c_in, c_out, 1, rng, bias=False)

    def forward(self, x: DiffTensor) -> DiffTensor:
        r = self.ratio
        h, w = x.shape[-2:]
        spatial = self.spatial(zero_interleave_op(x, r))
        fourier = self.fourier(x if r == 1 else spectral_resize_op(x, (r * h, r * w)))
        return ops.add(spatial, fourier)


class ResBlock(Module):
    def __init__(self, channels: int, rng, act: str, bias: bool = True):
        self.conv1 = Conv2d(channels, channels, 3, rng, bias=bias)
        self.conv2 = Conv2d(channels, channels, 3, rng, bias=bias)
        self.act = act

    def forward(self, x):
        return ops.add(x, self.conv2(ops.activation(self.conv1(x), self.act)))


class Encoder(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.up = HybridUpsample(cfg.in_channels, cfg.channels, cfg.upsample, rng, cfg.bias)
        self.blocks = [ResBlock(cfg.channels, rng, cfg.activation, cfg.bias) for _ in range(cfg.blocks)]

    def forward(self, a) -> DiffTensor:
        """(B, d_a, h, w) -> (B, d_z, r*h, r*w)."""
        a = ops.constant(a)
        if a.ndim != 4 or a.shape[1] != self.cfg.in_channels:
            raise ShapeError("encode", a.shape, ("B", self.cfg.in_channels, "h", "w"))
        z = self.up(a)
        for block in self.blocks:
            z = block(z)
        return z
