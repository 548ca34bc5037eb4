"""Pixel losses, the resize-residual prior and its exponential weight map."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .spectral import spectral_resize
from .tensor import DiffTensor, ShapeError

PRIOR_SOURCES = ("target", "prediction")


def _check(op: str, a: DiffTensor, b: DiffTensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


def l1_loss(pred, target, weight=None) -> DiffTensor:
    pred, target = ops.constant(pred), ops.constant(target)
    _check("l1", pred, target)
    err = ops.abs_(ops.sub(pred, target))
    if weight is not None:
        err = ops.mul(err, ops.constant(np.asarray(weight, dtype=err.dtype)))
    return ops.mean(err)


def l2_loss(pred, target, weight=None) -> DiffTensor:
    pred, target = ops.constant(pred), ops.constant(target)
    _check("l2", pred, target)
    d = ops.sub(pred, target)
    err = ops.mul(d, d)
    if weight is not None:
        err = ops.mul(err, ops.constant(np.asarray(weight, dtype=err.dtype)))
    return ops.mean(err)


def compute_prior(reference: np.ndarray, lr: np.ndarray, resized: np.ndarray | None = None) -> np.ndarray:
    """p = |reference - spectral_resize(lr)| on the reference grid.

    ``reference`` is the HR target or a model prediction; pass ``resized`` to
    reuse an already computed resize of ``lr``.
    """
    reference = np.asarray(reference)
    if resized is None:
        resized = spectral_resize(np.asarray(lr), reference.shape[-2:])
    if resized.shape != reference.shape:
        raise ShapeError("compute-prior", reference.shape, resized.shape)
    return np.abs(reference - resized)


def minmax_normalize(p: np.ndarray, axis=None) -> np.ndarray:
    """(p - min) / (max - min); constant inputs map to zeros."""
    p = np.asarray(p, dtype=np.float64)
    if p.size == 0:
        raise ValueError("cannot normalize an empty prior")
    lo = p.min(axis=axis, keepdims=True)
    span = p.max(axis=axis, keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (p - lo) / safe, 0.0)


@dataclass
class PriorWeightMap:
    weights: np.ndarray
    alpha: float
    beta: float
    source: str = "target"


def weight_map(p: np.ndarray, alpha: float = 1.0, beta: float = 0.1, source: str = "target",
               axis=None) -> PriorWeightMap:
    """W = alpha * exp(beta * n(p)); ``axis`` picks the normalization extent."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if source not in PRIOR_SOURCES:
        raise ValueError(f"unknown prior source {source!r}")
    w = alpha * np.exp(beta * minmax_normalize(p, axis=axis))
    return PriorWeightMap(w, float(alpha), float(beta), source)


def focal_composite_loss(pred, base, target, p_prior: np.ndarray, alpha_p: float = 1.0,
                         beta_p: float = 0.1, alpha_b: float = 1.0, beta_b: float = 0.1) -> DiffTensor:
    """mean( W(p) * W(b_hat) * |pred + base - target| ).

    ``pred`` is the residual output, ``base`` the spectral resize of the input.
    ``p_prior`` is the static target-based prior; the second weight uses the
    current absolute error and does not carry gradient.  Weights are min-max
    normalized per item (all axes but the first).
    """
    pred = ops.constant(pred)
    base, target = ops.constant(base), ops.constant(target)
    _check("focal-composite", pred, target)
    _check("focal-composite", base, target)
    p_prior = np.asarray(p_prior)
    if p_prior.shape != target.shape:
        raise ShapeError("focal-composite", p_prior.shape, target.shape)
    err = ops.abs_(ops.sub(ops.add(pred, base), target))
    axes = tuple(range(1, err.ndim)) if err.ndim >= 2 else None
    w_p = weight_map(p_prior, alpha_p, beta_p, axis=axes).weights
    w_b = weight_map(err.data, alpha_b, beta_b, source="prediction", axis=axes).weights
    w = (w_p * w_b).astype(err.dtype)
    return ops.mean(ops.mul(err, ops.constant(w)))


def two_stage_loss(stage: int, pred, target, weights: np.ndarray | None = None) -> DiffTensor:
    """Stage 1: plain L2.  Stage 2: L2 weighted by a frozen weight map."""
    if stage == 1:
        return l2_loss(pred, target)
    if stage == 2:
        if weights is None:
            raise ValueError("stage 2 needs a frozen weight map")
        return l2_loss(pred, target, weights)
    raise ValueError(f"stage must be 1 or 2, got {stage}")


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError("pearson", a.shape, b.shape)
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    if den == 0:
        return math.nan
    return float(a @ b) / den


def prior_error_correlation(pred, target, p) -> float:
    """Pearson r between |pred - target| and n(p); NaN when either is constant."""
    p = np.asarray(p)
    if np.ptp(p) == 0:
        return math.nan
    return pearson(np.abs(np.asarray(pred) - np.asarray(target)), minmax_normalize(p))


CORR_HEADER = ("record", "alpha", "beta", "pearson_r")


def write_correlation_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CORR_HEADER)
        for rec, alpha, beta, r in rows:
            w.writerow([rec, f"{alpha:g}", f"{beta:g}", "nan" if math.isnan(r) else f"{r:.6f}"])
