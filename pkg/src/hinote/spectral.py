"""Fourier-domain resampling: spectral resizing, zero-stuffing, windowed-sinc
anti-aliasing filters and radial power spectra.

Grids are cell-centred: sample ``i`` of an ``n``-point axis sits at fraction
``(i + 0.5) / n`` of the (periodic) domain.  All resamplers here respect that
convention, so resizing never shifts a field by half a cell.
"""
from __future__ import annotations

import csv
import functools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ops
from .tensor import DiffTensor

DEFAULT_TAPS = 33
DEFAULT_BETA = 8.0


def _check_extent(n: int, what: str) -> None:
    if int(n) != n or n < 1:
        raise ValueError(f"{what} extent must be a positive integer, got {n}")


# -- spectral resize ----------------------------------------------------------

def _resize_axis(x: np.ndarray, m: int, axis: int) -> np.ndarray:
    """Zero-pad or truncate the spectrum along one axis, cell-centre aligned."""
    n = x.shape[axis]
    if m == n:
        return x
    X = np.moveaxis(np.fft.fft(x, axis=axis), axis, -1)
    Y = np.zeros(X.shape[:-1] + (m,), dtype=complex)
    k = min(n, m)
    # output sample 0 sits at 0.5/m, input sample 0 at 0.5/n
    delta = 0.5 / m - 0.5 / n
    half = (k - 1) // 2
    pos = np.arange(0, half + 1)
    neg = np.arange(-half, 0)
    Y[..., pos] = X[..., pos] * np.exp(2j * np.pi * pos * delta)
    Y[..., neg] = X[..., neg] * np.exp(2j * np.pi * neg * delta)
    if k % 2 == 0:
        ny = k // 2
        shift = np.exp(1j * np.pi * k * delta)
        if m > n:
            # split the source Nyquist coefficient evenly over +-ny
            Y[..., ny] = 0.5 * X[..., ny] * shift
            Y[..., -ny] = 0.5 * X[..., ny] / shift
        else:
            # fold +-ny of the source onto the target Nyquist bin
            Y[..., ny] = X[..., ny] * shift + X[..., -ny] / shift
    y = np.fft.ifft(Y, axis=-1).real * (m / n)
    return np.moveaxis(y, -1, axis)


def spectral_resize(field: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Resize the last two axes of ``field`` by Fourier zero-padding/truncation.

    Amplitudes are rescaled so point values (not integrals) are preserved.
    """
    field = np.asarray(field)
    ty, tx = target
    _check_extent(ty, "target")
    _check_extent(tx, "target")
    if field.ndim < 2 or min(field.shape[-2:]) < 1:
        raise ValueError(f"field must have two spatial axes, got shape {field.shape}")
    out = _resize_axis(_resize_axis(field, int(ty), -2), int(tx), -1)
    if out is field:
        return field.copy()
    return out.astype(field.dtype) if field.dtype.kind == "f" else out


@functools.lru_cache(maxsize=256)
def spectral_resize_matrix(n: int, m: int) -> np.ndarray:
    """The (m, n) real matrix of the 1D spectral resize."""
    mat = np.array(_resize_axis(np.eye(n), m, 0))
    mat.setflags(write=False)
    return mat


def spectral_resize_op(x: DiffTensor, target: tuple[int, int]) -> DiffTensor:
    """Differentiable spectral resize on the last two axes; backward is the adjoint."""
    ty, tx = target
    _check_extent(ty, "target")
    _check_extent(tx, "target")
    my = spectral_resize_matrix(x.shape[-2], int(ty))
    mx = spectral_resize_matrix(x.shape[-1], int(tx))
    return ops.separable_linear(x, my, mx)


# -- zero-stuffing ------------------------------------------------------------

def trig_interp_matrix(n: int, positions) -> np.ndarray:
    """(len(positions), n) matrix evaluating the band-limited periodic
    interpolant of n samples at fractional sample ``positions``.

    Even n splits the Nyquist term into a cosine, which keeps the result real.
    """
    _check_extent(n, "input")
    d = np.asarray(positions, dtype=float)[:, None] - np.arange(n)[None, :]
    # closed-form Dirichlet sums; both tend to 1 where d is a multiple of n
    den = n * (np.tan(np.pi * d / n) if n % 2 == 0 else np.sin(np.pi * d / n))
    on_sample = np.abs(np.remainder(d + 0.5 * n, n) - 0.5 * n) < 1e-12
    return np.where(on_sample, 1.0, np.sin(np.pi * d) / np.where(on_sample, 1.0, den))


def zero_interleave_matrix(n: int, factor: int) -> np.ndarray:
    if factor < 1:
        raise ValueError(f"upsampling factor must be >= 1, got {factor}")
    mat = np.zeros((n * factor, n))
    mat[np.arange(n) * factor, np.arange(n)] = 1.0
    return mat


def zero_interleave_upsample(h: np.ndarray, factor: int) -> np.ndarray:
    """Insert ``factor - 1`` zeros after every sample along the last two axes."""
    if int(factor) != factor or factor < 1:
        raise ValueError(f"upsampling factor must be a positive integer, got {factor}")
    h = np.asarray(h)
    out = np.zeros(h.shape[:-2] + (h.shape[-2] * factor, h.shape[-1] * factor), dtype=h.dtype)
    out[..., ::factor, ::factor] = h
    return out


def zero_interleave_op(x: DiffTensor, factor: int) -> DiffTensor:
    if factor == 1:
        return x
    return ops.separable_linear(
        x, zero_interleave_matrix(x.shape[-2], factor), zero_interleave_matrix(x.shape[-1], factor)
    )


# -- windowed sinc ------------------------------------------------------------

def kaiser(t: np.ndarray, half_width: float, beta: float = DEFAULT_BETA) -> np.ndarray:
    """Continuous Kaiser window on [-half_width, half_width], zero outside."""
    t = np.asarray(t, dtype=float)
    r = np.clip(1.0 - (t / half_width) ** 2, 0.0, None)
    w = np.i0(beta * np.sqrt(r)) / np.i0(beta)
    return np.where(np.abs(t) <= half_width, w, 0.0)


@dataclass(frozen=True)
class SincFilter:
    """Separable low-pass ``sinc(2 w x0) sinc(2 w x1)`` truncated by a Kaiser window.

    ``cutoff`` is in cycles per sample (0.5 is the Nyquist rate).
    """

    cutoff: float
    taps: int = DEFAULT_TAPS
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        if self.taps % 2 == 0 or self.taps < 1:
            raise ValueError("taps must be odd")
        if not 0 < self.cutoff <= 0.5:
            raise ValueError(f"cutoff must lie in (0, 0.5] cycles/sample, got {self.cutoff}")

    @property
    def half_width(self) -> float:
        return (self.taps - 1) / 2

    def response(self, t) -> np.ndarray:
        """Unnormalised windowed-sinc values at (possibly fractional) offsets ``t``."""
        t = np.asarray(t, dtype=float)
        w = 2 * self.cutoff
        return w * np.sinc(w * t) * kaiser(t, self.half_width, self.beta)

    def taps1d(self) -> np.ndarray:
        k = self.response(np.arange(self.taps) - self.half_width)
        return k / k.sum()

    def kernel2d(self) -> np.ndarray:
        k = self.taps1d()
        return np.outer(k, k)


@functools.lru_cache(maxsize=512)
def resample_matrix(
    n_in: int,
    n_out: int,
    cutoff: float | None = None,
    taps: int = DEFAULT_TAPS,
    beta: float = DEFAULT_BETA,
) -> np.ndarray:
    """(n_out, n_in) windowed-sinc resampler on a periodic cell-centred axis.

    ``cutoff`` is a wavenumber in cycles per domain length; the default is the
    Nyquist wavenumber of the coarser grid.  Downsampling runs the filter at the
    input rate; upsampling zero-stuffs and runs it at the output rate.  Rows are
    normalised to unit DC gain.
    """
    _check_extent(n_in, "input")
    _check_extent(n_out, "output")
    nyq = min(n_in, n_out) / 2
    cutoff = nyq if cutoff is None else float(cutoff)
    if not 0 < cutoff <= max(n_in, n_out) / 2:
        raise ValueError(f"cutoff {cutoff} outside (0, {max(n_in, n_out) / 2}]")
    if n_in == n_out and cutoff >= nyq:
        mat = np.eye(n_in)
        mat.setflags(write=False)
        return mat
    mat = np.zeros((n_out, n_in))
    if n_out <= n_in:
        filt = SincFilter(cutoff / n_in, taps, beta)
        T = filt.half_width
        centres = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
        for i, p in enumerate(centres):
            js = np.arange(int(np.ceil(p - T)), int(np.floor(p + T)) + 1)
            np.add.at(mat[i], js % n_in, filt.response(p - js))
    else:
        filt = SincFilter(cutoff / n_out, taps, beta)
        T = filt.half_width
        ratio = n_out / n_in
        # coarse sample j lands at fine position (j + 0.5) * ratio - 0.5
        for i in range(n_out):
            lo = int(np.ceil(((i - T) + 0.5) / ratio - 0.5))
            hi = int(np.floor(((i + T) + 0.5) / ratio - 0.5))
            js = np.arange(lo, hi + 1)
            q = (js + 0.5) * ratio - 0.5
            np.add.at(mat[i], js % n_in, ratio * filt.response(i - q))
    mat /= mat.sum(axis=1, keepdims=True)
    mat.setflags(write=False)
    return mat


def resample(h: np.ndarray, target: tuple[int, int], cutoff: float | None = None) -> np.ndarray:
    """Windowed-sinc resample of the last two axes (numpy path)."""
    h = np.asarray(h)
    my = resample_matrix(h.shape[-2], int(target[0]), cutoff)
    mx = resample_matrix(h.shape[-1], int(target[1]), cutoff)
    return (my @ h) @ mx.T


def resample_op(x: DiffTensor, target: tuple[int, int], cutoff=None,
                axes=(-2, -1)) -> DiffTensor:
    """Differentiable :func:`resample`; ``cutoff`` may be one value or a (y, x) pair."""
    ay, ax = axes
    cy, cx = cutoff if isinstance(cutoff, (tuple, list)) else (cutoff, cutoff)
    my = resample_matrix(x.shape[ay], int(target[0]), cy)
    mx = resample_matrix(x.shape[ax], int(target[1]), cx)
    return ops.separable_linear(x, my, mx, axes=axes)


def antialias_downsample(h: np.ndarray, w_in: float, w_out: float, stride: int) -> np.ndarray:
    """Low-pass at ``w_out`` then decimate by ``stride``.

    ``w_in`` is the band limit carried by the input grid (its Nyquist
    wavenumber); the bandwidth ratio must match the stride.
    """
    if w_out > w_in:
        raise ValueError(f"w_out={w_out} exceeds w_in={w_in}; downsampling would alias")
    if stride < 1 or round(w_in / w_out) != stride:
        raise ValueError(f"stride {stride} does not match bandwidth ratio {w_in / w_out:g}")
    h = np.asarray(h)
    ny, nx = h.shape[-2:]
    if ny % stride or nx % stride:
        raise ValueError(f"extents {(ny, nx)} not divisible by stride {stride}")
    frac = w_out / w_in
    cy, cx = frac * ny / 2, frac * nx / 2
    my = resample_matrix(ny, ny // stride, cy)
    mx = resample_matrix(nx, nx // stride, cx)
    return (my @ h) @ mx.T


def interp_upsample(h: np.ndarray, factor: int) -> np.ndarray:
    """Zero-stuff by ``factor`` and apply the sinc interpolation filter."""
    if int(factor) != factor or factor < 1:
        raise ValueError(f"upsampling factor must be a positive integer, got {factor}")
    h = np.asarray(h)
    ny, nx = h.shape[-2:]
    return resample(h, (ny * factor, nx * factor))


# -- spectra ------------------------------------------------------------------

@dataclass
class RadialSpectrum:
    k: np.ndarray
    power: np.ndarray
    counts: np.ndarray

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "power"])
            for k, p in zip(self.k, self.power):
                w.writerow([int(k), repr(float(p))])


def wavenumbers(n: int) -> np.ndarray:
    return np.fft.fftfreq(n, d=1.0 / n)


def radial_power_spectrum(field: np.ndarray) -> RadialSpectrum:
    """Average of |FFT / n^2|^2 over unit-width annuli, bins k = 0 .. n/2."""
    field = np.asarray(field, dtype=float)
    if field.ndim != 2 or field.shape[0] != field.shape[1]:
        raise ValueError(f"radial spectrum needs a square 2D field, got {field.shape}")
    n = field.shape[0]
    F = np.fft.fft2(field) / n**2
    k = wavenumbers(n)
    kr = np.rint(np.hypot(k[:, None], k[None, :])).astype(int)
    nbins = n // 2 + 1
    mask = kr < nbins
    counts = np.bincount(kr[mask], minlength=nbins)
    total = np.bincount(kr[mask], weights=np.abs(F[mask]) ** 2, minlength=nbins)
    power = np.where(counts > 0, total / np.maximum(counts, 1), 0.0)
    return RadialSpectrum(np.arange(nbins), power, counts)
