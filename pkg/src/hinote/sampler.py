"""Parameter-free rendering of a feature map at arbitrary query points.

Each query gathers its four bracketing feature vectors, scaled by the area of
the rectangle between the query and the diagonally opposite centre (divided by
the cell area), and packs them with the query's offsets and cell size.

Neighbour order is ``00, 01, 10, 11`` = (top, left), (top, right),
(bottom, left), (bottom, right), where "top" is the smaller row index.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .fields import DEFAULT_BOX
from .tensor import DiffTensor

NEIGHBOURS = ((0, 0), (0, 1), (1, 0), (1, 1))
EXTRA_CHANNELS = 10  # 4 x (dx', dy') offsets + 2 cell sizes


@dataclass
class FeatureMap:
    z: DiffTensor  # (B, C, h, w)
    box: tuple = DEFAULT_BOX

    @property
    def extents(self) -> tuple[int, int]:
        return self.z.shape[-2], self.z.shape[-1]

    @property
    def dx(self) -> float:
        return (self.box[1] - self.box[0]) / self.z.shape[-1]

    @property
    def dy(self) -> float:
        return (self.box[3] - self.box[2]) / self.z.shape[-2]


@dataclass(frozen=True)
class QueryGrid:
    """Cell centres of an ``extents`` grid over ``box``."""

    extents: tuple
    box: tuple = DEFAULT_BOX

    def coords(self) -> np.ndarray:
        """(Q, 2) array of (x, y), row-major over the grid."""
        ny, nx = self.extents
        x0, x1, y0, y1 = self.box
        xs = x0 + (np.arange(nx) + 0.5) * (x1 - x0) / nx
        ys = y0 + (np.arange(ny) + 0.5) * (y1 - y0) / ny
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx.ravel(), gy.ravel()], axis=1)

    def __len__(self) -> int:
        return self.extents[0] * self.extents[1]


def query_grid(extents, box=DEFAULT_BOX) -> QueryGrid:
    ny, nx = (int(e) for e in extents)
    if ny < 1 or nx < 1:
        raise ValueError(f"query extents must be positive, got {extents}")
    return QueryGrid((ny, nx), tuple(box))


@dataclass
class NeighbourTable:
    index: np.ndarray    # (4, Q) flat indices into the h*w map
    weight: np.ndarray   # (4, Q) area weights a_i / (dx dy)
    offsets: np.ndarray  # (4, Q, 2) query minus neighbour centre, in cell units (x, y)
    cell: np.ndarray     # (Q, 2) query cell size in map-cell units (x, y)
    clamped: np.ndarray  # (Q,) query was outside the box and got clamped


def _axis_positions(queries, map_extents) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Query positions in map index units (px, py), cell sizes, clamp flags."""
    h, w = map_extents
    if isinstance(queries, QueryGrid):
        ny, nx = queries.extents
        px1 = (np.arange(nx) + 0.5) * (w / nx) - 0.5
        py1 = (np.arange(ny) + 0.5) * (h / ny) - 0.5
        px = np.tile(px1, ny)
        py = np.repeat(py1, nx)
        cell = np.tile([w / nx, h / ny], (ny * nx, 1))
        return px, py, cell, np.zeros(ny * nx, dtype=bool)
    pts, box = queries
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x0, x1, y0, y1 = box
    cx = np.clip(pts[:, 0], x0, x1)
    cy = np.clip(pts[:, 1], y0, y1)
    clamped = (cx != pts[:, 0]) | (cy != pts[:, 1])
    px = (cx - x0) / (x1 - x0) * w - 0.5
    py = (cy - y0) / (y1 - y0) * h - 0.5
    return px, py, np.ones((len(px), 2)), clamped


def neighbour_table(map_extents, queries) -> NeighbourTable:
    """``queries`` is a :class:`QueryGrid` or a ``(points, box)`` tuple."""
    h, w = map_extents
    if h < 1 or w < 1:
        raise ValueError("empty feature map")
    px, py, cell, clamped = _axis_positions(queries, map_extents)
    if px.size == 0:
        raise ValueError("no query points")
    ix0 = np.floor(px).astype(np.intp)
    iy0 = np.floor(py).astype(np.intp)
    index, weight, offsets = [], [], []
    for dy_, dx_ in NEIGHBOURS:
        jx, jy = ix0 + dx_, iy0 + dy_
        # diagonal counterpart of this neighbour
        kx, ky = ix0 + (1 - dx_), iy0 + (1 - dy_)
        weight.append(np.abs(px - kx) * np.abs(py - ky))
        offsets.append(np.stack([px - jx, py - jy], axis=1))
        index.append(np.clip(jy, 0, h - 1) * w + np.clip(jx, 0, w - 1))
    return NeighbourTable(np.stack(index), np.stack(weight), np.stack(offsets), cell, clamped)


def neighbour_offsets(query, fmap_extents, box=DEFAULT_BOX) -> np.ndarray:
    """Offsets (x', y') of one query from its four bracketing centres, in cells."""
    table = neighbour_table(fmap_extents, (np.asarray(query, dtype=float)[None], box))
    return table.offsets[:, 0, :]


@dataclass
class EnsembledFeature:
    """Decoder input: ``features`` is (B, 4C + 10, *grid) or (B, 4C + 10, Q)."""

    features: DiffTensor
    table: NeighbourTable
    grid: QueryGrid | None = None


def render(fmap: FeatureMap, queries) -> EnsembledFeature:
    """Channel layout: [4C area-weighted neighbour features | 8 offsets | 2 cell sizes]."""
    z = fmap.z
    b, c, h, w = z.shape
    if h * w == 0:
        raise ValueError("empty feature map")
    table = neighbour_table((h, w), queries)
    q = table.index.shape[1]
    flat = ops.reshape(z, (b, c, h * w))
    parts = [ops.gather_weighted(flat, table.index[i], table.weight[i]) for i in range(4)]
    extra = np.concatenate(
        [table.offsets.transpose(0, 2, 1).reshape(8, q), table.cell.T], axis=0
    ).astype(z.dtype)
    parts.append(ops.constant(np.broadcast_to(extra, (b, EXTRA_CHANNELS, q)).copy()))
    feats = ops.concat(parts, axis=1)
    grid = queries if isinstance(queries, QueryGrid) else None
    if grid is not None:
        feats = ops.reshape(feats, (b, 4 * c + EXTRA_CHANNELS) + tuple(grid.extents))
    return EnsembledFeature(feats, table, grid)


def weighted_sum(fmap_values: np.ndarray, table: NeighbourTable) -> np.ndarray:
    """Sum_i w_i z_i per query; ``fmap_values`` is (C, h, w), returns (C, Q)."""
    flat = fmap_values.reshape(fmap_values.shape[0], -1)
    return sum(flat[:, table.index[i]] * table.weight[i] for i in range(4))
