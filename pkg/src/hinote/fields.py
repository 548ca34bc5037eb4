"""Grid fields, LR/HR pairs, image-quality metrics and interpolation baselines."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.ndimage import correlate1d

from .spectral import spectral_resize

DEFAULT_BOX = (-1.0, 1.0, -1.0, 1.0)  # x_min, x_max, y_min, y_max
MIN_LR_EXTENT = 8
INTERP_METHODS = ("nearest", "bilinear", "bicubic")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class GridField:
    """Values of a function on the cell centres of a regular grid over ``box``."""

    values: np.ndarray  # (c, n_y, n_x)
    box: tuple = DEFAULT_BOX

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim == 2:
            v = v[None]
        if v.ndim != 3:
            raise ValueError(f"GridField values must be (c, n_y, n_x), got {v.shape}")
        self.values = v
        x0, x1, y0, y1 = self.box
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"degenerate domain box {self.box}")

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def extents(self) -> tuple[int, int]:
        return self.values.shape[1], self.values.shape[2]

    @property
    def dx(self) -> float:
        return (self.box[1] - self.box[0]) / self.values.shape[2]

    @property
    def dy(self) -> float:
        return (self.box[3] - self.box[2]) / self.values.shape[1]

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-centre coordinates ``(x, y)`` along each axis."""
        ny, nx = self.extents
        x = self.box[0] + (np.arange(nx) + 0.5) * self.dx
        y = self.box[2] + (np.arange(ny) + 0.5) * self.dy
        return x, y


@dataclass
class SRPair:
    lr: GridField
    hr: GridField
    scale: tuple = dc_field(init=False)

    def __post_init__(self):
        (ly, lx), (hy, hx) = self.lr.extents, self.hr.extents
        if hy < ly or hx < lx:
            raise ValueError(f"HR extents {(hy, hx)} smaller than LR extents {(ly, lx)}")
        self.scale = (hy / ly, hx / lx)


def lr_extents(hr_extents: tuple[int, int], s: float) -> tuple[int, int]:
    return tuple(round_half_up(n / s) for n in hr_extents)


def make_pair(hr: GridField, s: float, method: str = "spectral") -> SRPair:
    """Degrade ``hr`` by a factor ``s`` (>= 1) to build an LR/HR pair."""
    if s < 1:
        raise ValueError(f"scale must be >= 1, got {s}")
    target = lr_extents(hr.extents, s)
    if min(target) < MIN_LR_EXTENT:
        raise ValueError(f"LR extents {target} below minimum {MIN_LR_EXTENT} at scale {s}")
    if method == "spectral":
        lr = spectral_resize(hr.values, target)
    elif method == "bicubic":
        lr = interpolate(hr.values, target, "bicubic", antialias=True)
    else:
        raise ValueError(f"unknown degradation method {method!r}")
    return SRPair(GridField(lr, hr.box), hr)


def random_crop(f: GridField, crop: tuple[int, int], rng: np.random.Generator) -> GridField:
    """Axis-aligned sub-field; the crop's domain box is remapped to [-1, 1]^2."""
    cy, cx = crop
    ny, nx = f.extents
    if cy > ny or cx > nx or cy < 1 or cx < 1:
        raise ValueError(f"crop {crop} does not fit in field of extents {f.extents}")
    oy = int(rng.integers(0, ny - cy + 1))
    ox = int(rng.integers(0, nx - cx + 1))
    return GridField(f.values[:, oy:oy + cy, ox:ox + cx].copy(), DEFAULT_BOX)


# -- metrics ------------------------------------------------------------------

def _pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    return pred, target


def mse(pred, target) -> float:
    pred, target = _pair(pred, target)
    return float(np.mean((pred - target) ** 2))


def _data_range(target: np.ndarray, data_range) -> float:
    if data_range is not None:
        return float(data_range)
    r = float(target.max() - target.min())
    return r if r > 0 else 1.0


def psnr(pred, target, data_range: float | None = None) -> float:
    """10 log10(range^2 / mse); +inf when the prediction is exact."""
    pred, target = _pair(pred, target)
    err = float(np.mean((pred - target) ** 2))
    if err == 0:
        return math.inf
    return 10.0 * math.log10(_data_range(target, data_range) ** 2 / err)


@functools.lru_cache(maxsize=4)
def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    t = np.arange(size) - (size - 1) / 2
    w = np.exp(-0.5 * (t / sigma) ** 2)
    return w / w.sum()


def _ssim_2d(x: np.ndarray, y: np.ndarray, data_range: float, k1: float, k2: float) -> float:
    win = _gaussian_window()

    def blur(a):
        return correlate1d(correlate1d(a, win, axis=0, mode="reflect"), win, axis=1, mode="reflect")

    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mx, my = blur(x), blur(y)
    sxx = blur(x * x) - mx * mx
    syy = blur(y * y) - my * my
    sxy = blur(x * y) - mx * my
    s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    pad = (len(win) - 1) // 2
    if min(s.shape) > 2 * pad:
        s = s[pad:-pad, pad:-pad]
    return float(s.mean())


def ssim(pred, target, data_range: float | None = None, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over channels."""
    pred, target = _pair(pred, target)
    rng = _data_range(target, data_range)
    if pred.ndim == 2:
        return _ssim_2d(pred, target, rng, k1, k2)
    p = pred.reshape(-1, *pred.shape[-2:])
    t = target.reshape(-1, *target.shape[-2:])
    return float(np.mean([_ssim_2d(a, b, rng, k1, k2) for a, b in zip(p, t)]))


# -- classical interpolation --------------------------------------------------

def _cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    x = np.abs(x)
    out = np.where(x <= 1, (a + 2) * x**3 - (a + 3) * x**2 + 1, 0.0)
    return np.where((x > 1) & (x < 2), a * x**3 - 5 * a * x**2 + 8 * a * x - 4 * a, out)


@functools.lru_cache(maxsize=256)
def interp_matrix(n_in: int, n_out: int, method: str, antialias: bool = False) -> np.ndarray:
    """(n_out, n_in) cell-centre aligned interpolation with edge clamping."""
    if method not in INTERP_METHODS:
        raise ValueError(f"unknown interpolation method {method!r}; expected {INTERP_METHODS}")
    p = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    if method == "nearest":
        idx = np.clip(np.floor(p + 0.5).astype(int), 0, n_in - 1)
        mat[rows, idx] = 1.0
    elif method == "bilinear":
        i0 = np.floor(p).astype(int)
        t = p - i0
        np.add.at(mat, (rows, np.clip(i0, 0, n_in - 1)), 1 - t)
        np.add.at(mat, (rows, np.clip(i0 + 1, 0, n_in - 1)), t)
    else:
        stretch = max(n_in / n_out, 1.0) if antialias else 1.0
        support = 2 * stretch
        for i, pi in enumerate(p):
            js = np.arange(int(np.floor(pi - support)) + 1, int(np.ceil(pi + support)))
            w = _cubic((pi - js) / stretch)
            np.add.at(mat[i], np.clip(js, 0, n_in - 1), w)
        mat /= mat.sum(axis=1, keepdims=True)
    mat.setflags(write=False)
    return mat


def interpolate(values: np.ndarray, target: tuple[int, int], method: str, antialias: bool = False):
    values = np.asarray(values)
    my = interp_matrix(values.shape[-2], int(target[0]), method, antialias)
    mx = interp_matrix(values.shape[-1], int(target[1]), method, antialias)
    out = (my @ values) @ mx.T
    return out.astype(values.dtype) if values.dtype.kind == "f" else out


def interp_baseline(lr: GridField, target: tuple[int, int], method: str) -> GridField:
    """Nearest / bilinear / Catmull-Rom bicubic upsampling of ``lr`` to ``target``."""
    return GridField(interpolate(lr.values, target, method), lr.box)
