"""Hierarchical attention decoder: lifting, a K-level U-Net of Galerkin
attention blocks with windowed-sinc resampling between levels, projection."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .attention import GalerkinAttention
from .nn import MLP, Module
from .sampler import EXTRA_CHANNELS, EnsembledFeature
from .spectral import resample_op
from .tensor import DiffTensor, ShapeError


class HierarchyError(ValueError):
    pass


def halve_even(n: int) -> int:
    h = n // 2
    return max(h - h % 2, 2) if h >= 2 else h


@dataclass
class HierarchySpec:
    levels: int = 2
    width: int = 32
    blocks: int = 2
    heads: int = 4
    ffn_mult: int = 2

    def validate(self) -> None:
        if self.levels < 1 or self.blocks < 0:
            raise ValueError(f"invalid hierarchy {self}")
        if self.width % self.heads:
            raise ValueError(f"width {self.width} is not divisible by {self.heads} heads")

    def extents(self, query_extents) -> list[tuple[int, int]]:
        """Grid extents per level, finest (the query grid) first."""
        ny, nx = (int(e) for e in query_extents)
        if min(ny, nx) < 2 ** self.levels:
            raise HierarchyError(
                f"hierarchy too deep for grid: {self.levels} levels need extents >= "
                f"{2 ** self.levels}, got {(ny, nx)}"
            )
        out = [(ny, nx)]
        for _ in range(1, self.levels):
            out.append(tuple(halve_even(n) for n in out[-1]))
        return out

    def bandwidths(self, query_extents) -> list[tuple[float, float]]:
        """Per-level (y, x) band limit in cycles per domain; halves each level."""
        ny, nx = self.extents(query_extents)[0]
        return [(ny / 2 / 2**k, nx / 2 / 2**k) for k in range(self.levels)]

    def descend_cutoffs(self, query_extents) -> list[tuple[float, float]]:
        """Filter cutoff for the level k -> k+1 step: the coarser band limit,
        capped at the coarser grid's Nyquist wavenumber."""
        ext = self.extents(query_extents)
        bw = self.bandwidths(query_extents)
        return [tuple(min(w, n / 2) for w, n in zip(bw[k + 1], ext[k + 1]))
                for k in range(self.levels - 1)]


@dataclass
class DecoderConfig:
    in_channels: int  # 4 * d_z + 10
    out_channels: int = 1
    lift_hidden: int = 64
    proj_hidden: int = 64
    activation: str = "gelu"
    hierarchy: HierarchySpec = field(default_factory=HierarchySpec)

    def validate(self) -> None:
        self.hierarchy.validate()
        if self.in_channels <= EXTRA_CHANNELS:
            raise ValueError("decoder input must carry feature channels besides positions")
        if self.hierarchy.width <= self.out_channels:
            raise ValueError(
                f"last hidden width {self.hierarchy.width} must exceed output channels {self.out_channels}"
            )


# Output projections of both sublayers start shrunk so every block begins
# close to the identity map; exact zeros would starve q/k/v of gradient.
RESIDUAL_INIT_GAIN = 0.05


class LevelBlock(Module):
    """Pre-normalized attention and feed-forward sublayers, each residual."""

    def __init__(self, d: int, heads: int, rng, act: str, ffn_mult: int = 2):
        self.attn = GalerkinAttention(d, heads, rng)
        self.ffn = MLP(d, ffn_mult * d, d, rng, act)
        for w in (self.attn.out.weight, self.ffn.fc2.weight):
            w.data *= w.data.dtype.type(RESIDUAL_INIT_GAIN)

    def forward(self, h: DiffTensor) -> DiffTensor:
        h = ops.add(h, self.attn(ops.layer_norm(h)))
        return ops.add(h, self.ffn(ops.layer_norm(h)))


class LevelStack(Module):
    def __init__(self, blocks: list[LevelBlock]):
        self.blocks = blocks

    def forward(self, x: DiffTensor) -> DiffTensor:
        """(B, H, W, d) -> same; tokens are the H*W grid points."""
        if not self.blocks:
            return x
        b, hh, ww, d = x.shape
        h = ops.reshape(x, (b, hh * ww, d))
        for block in self.blocks:
            h = block(h)
        return ops.reshape(h, (b, hh, ww, d))


def descend(x: DiffTensor, target, cutoff=None) -> DiffTensor:
    """Low-pass and decimate a (B, H, W, C) field to ``target`` extents."""
    return resample_op(x, target, cutoff, axes=(1, 2))


def ascend(x: DiffTensor, target) -> DiffTensor:
    """Zero-stuff and interpolate a (B, H, W, C) field up to ``target`` extents."""
    return resample_op(x, target, None, axes=(1, 2))


class Decoder(Module):
    def __init__(self, cfg: DecoderConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        hs = cfg.hierarchy
        d = hs.width

        def stack():
            return LevelStack([LevelBlock(d, hs.heads, rng, cfg.activation, hs.ffn_mult)
                               for _ in range(hs.blocks)])

        self.lift = MLP(cfg.in_channels, cfg.lift_hidden, d, rng, cfg.activation)
        self.down = [stack() for _ in range(hs.levels - 1)]
        self.bottom = stack()
        self.up = [stack() for _ in range(hs.levels - 1)]
        self.proj = MLP(d, cfg.proj_hidden, cfg.out_channels, rng, cfg.activation)

    def forward(self, feats) -> DiffTensor:
        """(B, 4 d_z + 10, H, W) ensembled features -> (B, d_b, H, W)."""
        if isinstance(feats, EnsembledFeature):
            feats = feats.features
        feats = ops.constant(feats)
        if feats.ndim != 4 or feats.shape[1] != self.cfg.in_channels:
            raise ShapeError("decode", feats.shape, ("B", self.cfg.in_channels, "H", "W"))
        hs = self.cfg.hierarchy
        grid = feats.shape[2:]
        ext = hs.extents(grid)
        cut = hs.descend_cutoffs(grid)
        x = self.lift(ops.transpose(feats, (0, 2, 3, 1)))
        skips = []
        for k in range(hs.levels - 1):
            x = self.down[k](x)
            skips.append(x)
            x = descend(x, ext[k + 1], cut[k])
        x = self.bottom(x)
        for k in reversed(range(hs.levels - 1)):
            x = ops.add(ascend(x, ext[k]), skips[k])
            x = self.up[k](x)
        return ops.transpose(self.proj(x), (0, 3, 1, 2))
