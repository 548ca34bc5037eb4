"""Galerkin-type linear attention, its brute-force kernel-sum oracle, a softmax
reference and a small runtime benchmark."""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass

import numpy as np

from . import ops
from .nn import Linear, Module, Parameter, glorot
from .tensor import DiffTensor, ShapeError

STD_EPS = 1e-5


def _standardize(m: np.ndarray, eps: float = STD_EPS) -> np.ndarray:
    mu = m.mean(axis=-2, keepdims=True)
    var = m.var(axis=-2, keepdims=True)
    return (m - mu) / np.sqrt(var + eps)


class GalerkinAttention(Module):
    """Multi-head Z = (1/m) Q (K^T V) with column-standardized K and V.

    Heads are split before standardization so each head has its own kernel.
    Input is (m, d) or (B, m, d).  ``affine=True`` adds a learnable per-column
    scale and shift after standardizing K and V.
    """

    def __init__(self, d: int, heads: int, rng: np.random.Generator, bias: bool = True,
                 affine: bool = False):
        if heads < 1 or d % heads:
            raise ValueError(f"width {d} is not divisible by {heads} heads")
        self.d = d
        self.heads = heads
        self.wq = Parameter(glorot(rng, (d, d), d, d))
        self.wk = Parameter(glorot(rng, (d, d), d, d))
        self.wv = Parameter(glorot(rng, (d, d), d, d))
        self.out = Linear(d, d, rng, bias=bias)
        self.affine = affine
        if affine:
            shape = (heads, 1, d // heads)
            self.k_scale, self.k_shift = Parameter(np.ones(shape)), Parameter(np.zeros(shape))
            self.v_scale, self.v_shift = Parameter(np.ones(shape)), Parameter(np.zeros(shape))

    def _split(self, x: DiffTensor) -> DiffTensor:
        b, m, _ = x.shape
        x = ops.reshape(x, (b, m, self.heads, self.d // self.heads))
        return ops.transpose(x, (0, 2, 1, 3))

    def forward(self, h) -> DiffTensor:
        h = ops.constant(h)
        squeeze = h.ndim == 2
        if squeeze:
            h = ops.reshape(h, (1,) + h.shape)
        if h.ndim != 3 or h.shape[-1] != self.d:
            raise ShapeError("galerkin-attention", h.shape, ("m", self.d))
        b, m, d = h.shape
        q = self._split(ops.matmul(h, self.wq))
        k = ops.column_standardize(self._split(ops.matmul(h, self.wk)), STD_EPS)
        v = ops.column_standardize(self._split(ops.matmul(h, self.wv)), STD_EPS)
        if self.affine:
            k = ops.add(ops.mul(k, self.k_scale), self.k_shift)
            v = ops.add(ops.mul(v, self.v_scale), self.v_shift)
        kv = ops.matmul(ops.transpose(k, (0, 1, 3, 2)), v)  # (b, heads, dk, dk)
        z = ops.scale(ops.matmul(q, kv), 1.0 / m)
        z = ops.reshape(ops.transpose(z, (0, 2, 1, 3)), (b, m, d))
        z = self.out(z)
        return ops.reshape(z, (m, d)) if squeeze else z

    def weights(self) -> dict:
        return {"wq": self.wq.data, "wk": self.wk.data, "wv": self.wv.data,
                "wo": self.out.weight.data, "bo": None if self.out.bias is None else self.out.bias.data}


# -- plain numpy references ---------------------------------------------------

def galerkin_kernel(q: np.ndarray, k_hat: np.ndarray, v_hat: np.ndarray) -> np.ndarray:
    """(1/m) Q (K^T V) for already-normalized K, V of shape (m, d)."""
    return q @ (k_hat.T @ v_hat) / q.shape[0]


def brute_force_kernel_sum(q: np.ndarray, k_hat: np.ndarray, v_hat: np.ndarray) -> np.ndarray:
    """Output column j = sum_l (k^l . v^j) / m * q^l, evaluated term by term.

    ``k^l`` is column l of K, so every coefficient is an explicit inner
    product over the m samples. Slow on purpose.
    """
    m, d = q.shape
    if k_hat.shape != (m, d) or v_hat.shape[0] != m:
        raise ShapeError("brute-force-kernel-sum", q.shape, k_hat.shape)
    dv = v_hat.shape[1]
    out = np.zeros((m, dv))
    for j in range(dv):
        for l in range(d):
            coef = 0.0
            for s in range(m):
                coef += k_hat[s, l] * v_hat[s, j]
            coef /= m
            for i in range(m):
                out[i, j] += coef * q[i, l]
    return out


def galerkin_attention_np(h: np.ndarray, wq, wk, wv, heads: int = 1, wo=None, bo=None) -> np.ndarray:
    m, d = h.shape
    dk = d // heads
    q, k, v = h @ wq, h @ wk, h @ wv
    parts = []
    for i in range(heads):
        sl = slice(i * dk, (i + 1) * dk)
        parts.append(galerkin_kernel(q[:, sl], _standardize(k[:, sl]), _standardize(v[:, sl])))
    z = np.concatenate(parts, axis=1)
    if wo is not None:
        z = z @ wo
    if bo is not None:
        z = z + bo
    return z


def softmax(s: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def vanilla_attention(h: np.ndarray, wq, wk, wv, heads: int = 1, wo=None, bo=None) -> np.ndarray:
    """softmax(Q K^T / sqrt(d_k)) V per head; materializes the m x m score matrix."""
    h = np.asarray(h)
    squeeze = h.ndim == 2
    if squeeze:
        h = h[None]
    b, m, d = h.shape
    dk = d // heads

    def split(x):
        return x.reshape(b, m, heads, dk).transpose(0, 2, 1, 3)

    q, k, v = split(h @ wq), split(h @ wk), split(h @ wv)
    attn = softmax(q @ k.transpose(0, 1, 3, 2) / np.sqrt(dk))
    z = (attn @ v).transpose(0, 2, 1, 3).reshape(b, m, d)
    if wo is not None:
        z = z @ wo
    if bo is not None:
        z = z + bo
    return z[0] if squeeze else z


def galerkin_batched_np(h: np.ndarray, wq, wk, wv, heads: int = 1, wo=None, bo=None) -> np.ndarray:
    """Batched numpy forward matching :class:`GalerkinAttention`, for benchmarking."""
    b, m, d = h.shape
    dk = d // heads

    def split(x):
        return x.reshape(b, m, heads, dk).transpose(0, 2, 1, 3)

    q, k, v = split(h @ wq), _standardize(split(h @ wk)), _standardize(split(h @ wv))
    z = (q @ (k.transpose(0, 1, 3, 2) @ v) / m).transpose(0, 2, 1, 3).reshape(b, m, d)
    if wo is not None:
        z = z @ wo
    if bo is not None:
        z = z + bo
    return z


# -- cost accounting and benchmark --------------------------------------------

def flops(variant: str, m: int, d: int) -> int:
    """Multiply-add count x2 for the projections and the kernel product.

    galerkin: 2 m d^2 x (3 projections + K^T V + Q (K^T V)) = 10 m d^2
    vanilla:  3 projections (6 m d^2) + Q K^T and A V (4 m^2 d)
    """
    if variant == "galerkin":
        return 10 * m * d * d
    if variant == "vanilla":
        return 6 * m * d * d + 4 * m * m * d
    raise ValueError(f"unknown attention variant {variant!r}")


def param_count(d: int, bias: bool = True) -> int:
    return 4 * d * d + (d if bias else 0)


@dataclass
class BenchRow:
    variant: str
    m: int
    d: int
    heads: int
    params: int
    flops: int
    median_seconds: float


BENCH_HEADER = ("variant", "m", "d", "heads", "params", "flops", "median_seconds")


def bench_attention(sizes, d: int = 32, heads: int = 4, reps: int = 20, seed: int = 0,
                    batch: int = 1, variants=("galerkin", "vanilla"), timer=time.perf_counter) -> list[BenchRow]:
    rng = np.random.default_rng(seed)
    ws = [glorot(rng, (d, d), d, d).astype(np.float32) for _ in range(4)]
    fns = {"galerkin": galerkin_batched_np, "vanilla": vanilla_attention}
    rows = []
    for variant in variants:
        fn = fns[variant]
        for m in sizes:
            h = rng.standard_normal((batch, m, d)).astype(np.float32)
            fn(h, *ws[:3], heads, ws[3])  # warm-up
            times = []
            for _ in range(reps):
                t0 = timer()
                fn(h, *ws[:3], heads, ws[3])
                times.append(timer() - t0)
            rows.append(BenchRow(variant, int(m), d, heads, param_count(d, bias=False),
                                 flops(variant, int(m), d), float(np.median(times))))
    return rows


def bench_csv(rows: list[BenchRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_HEADER)
    for r in rows:
        w.writerow([r.variant, r.m, r.d, r.heads, r.params, r.flops, f"{r.median_seconds:.6e}"])
    return buf.getvalue()


def loglog_slope(rows: list[BenchRow], variant: str) -> float:
    pts = [(r.m, r.median_seconds) for r in rows if r.variant == variant]
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])
