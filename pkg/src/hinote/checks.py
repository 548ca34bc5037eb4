"""Named finite-difference gradient checks for every op and the composed model.

Each case builds a small random 64-bit instance and a scalar loss
``sum(output * R)`` with a fixed random ``R``, so no gradient is zero by
symmetry.  Inputs to kinked ops are kept away from the kink.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops
from .attention import GalerkinAttention
from .decoder import Decoder, DecoderConfig, HierarchySpec
from .encoder import Encoder, EncoderConfig
from .gradcheck import grad_check
from .model import HiNOTE, ModelConfig
from .nn import Linear, Parameter
from .sampler import FeatureMap, query_grid, render
from .spectral import resample_matrix, spectral_resize_matrix
from .tensor import precision

TOLERANCE = 1e-4


def _probe(out, rng):
    r = rng.standard_normal(out.shape)
    return ops.sum_(ops.mul(out, r))


def _away(rng, shape, gap=0.1):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-12) * (gap + np.abs(x)), x)


def _unary(rng, op, shape=(3, 4), x=None):
    x = Parameter(rng.standard_normal(shape) if x is None else x)
    r = rng.standard_normal(op(x).shape)
    return (lambda: ops.sum_(ops.mul(op(x), r))), [x]


def _binary(rng, op, sa, sb):
    a, b = Parameter(rng.standard_normal(sa)), Parameter(rng.standard_normal(sb))
    r = rng.standard_normal(op(a, b).shape)
    return (lambda: ops.sum_(ops.mul(op(a, b), r))), [a, b]


def _module(rng, module, build_input):
    x = build_input()
    r = rng.standard_normal(module(x).shape)
    return (lambda: ops.sum_(ops.mul(module(x), r))), module.parameters()


def _case_conv(rng):
    x = Parameter(rng.standard_normal((2, 3, 5, 6)))
    w = Parameter(rng.standard_normal((4, 3, 3, 3)))
    b = Parameter(rng.standard_normal(4))
    r = rng.standard_normal((2, 4, 5, 6))
    return (lambda: ops.sum_(ops.mul(ops.conv2d(x, w, b), r))), [x, w, b]


def _case_concat(rng):
    a, b = Parameter(rng.standard_normal((2, 3, 4))), Parameter(rng.standard_normal((2, 2, 4)))
    r = rng.standard_normal((2, 5, 4))
    return (lambda: ops.sum_(ops.mul(ops.concat([a, b], axis=1), r))), [a, b]


def _case_slice(rng):
    x = Parameter(rng.standard_normal((4, 5)))
    idx = (np.array([0, 2, 2, 3]), np.array([1, 1, 4, 0]))
    r1 = rng.standard_normal((2, 3))
    r2 = rng.standard_normal(4)

    def fn():
        basic = ops.sum_(ops.mul(ops.slice_(x, (slice(1, 3), slice(0, 5, 2))), r1))
        adv = ops.sum_(ops.mul(ops.slice_(x, idx), r2))
        return ops.add(basic, adv)

    return fn, [x]


def _case_gather(rng):
    x = Parameter(rng.standard_normal((2, 3, 10)))
    index = rng.integers(0, 10, size=14)
    weight = rng.uniform(0, 1, size=14)
    r = rng.standard_normal((2, 3, 14))
    return (lambda: ops.sum_(ops.mul(ops.gather_weighted(x, index, weight), r))), [x]


def _case_separable(rng):
    x = Parameter(rng.standard_normal((2, 6, 5, 3)))
    my, mx = spectral_resize_matrix(6, 9), resample_matrix(5, 3)
    r = rng.standard_normal((2, 9, 3, 3))
    return (lambda: ops.sum_(ops.mul(ops.separable_linear(x, my, mx, axes=(1, 2)), r))), [x]


def _case_activation(kind):
    def build(rng):
        return _unary(rng, lambda t: ops.activation(t, kind), x=_away(rng, (3, 5)))
    return build


def _case_encoder(rng):
    enc = Encoder(EncoderConfig(in_channels=1, channels=4, blocks=1, upsample=2), rng)
    x = rng.standard_normal((1, 1, 4, 4))
    return _module(rng, enc, lambda: x)


def _case_render(rng):
    z = Parameter(rng.standard_normal((1, 3, 5, 6)))
    grid = query_grid((7, 9))
    r = rng.standard_normal((1, 4 * 3 + 10, 7, 9))
    return (lambda: ops.sum_(ops.mul(render(FeatureMap(z), grid).features, r))), [z]


def _case_attention(rng):
    att = GalerkinAttention(8, 2, rng)
    h = rng.standard_normal((2, 10, 8))
    return _module(rng, att, lambda: h)


def _case_decoder(rng):
    dec = Decoder(DecoderConfig(in_channels=4 * 2 + 10, out_channels=1, lift_hidden=8, proj_hidden=8,
                                hierarchy=HierarchySpec(levels=2, width=8, blocks=1, heads=2)), rng)
    feats = rng.standard_normal((1, 18, 12, 12))
    return _module(rng, dec, lambda: feats)


def _case_model(rng):
    cfg = ModelConfig(channels=1, encoder=EncoderConfig(channels=2, blocks=1, upsample=2),
                      hierarchy=HierarchySpec(levels=2, width=4, blocks=1, heads=2),
                      lift_hidden=4, proj_hidden=4)
    model = HiNOTE(cfg, seed=int(rng.integers(1 << 31)))
    lr = rng.standard_normal((1, 1, 4, 4))
    r = rng.standard_normal((1, 1, 9, 9))
    return (lambda: ops.sum_(ops.mul(model(lr, (9, 9)), r))), model.parameters()


CASES: dict[str, Callable] = {
    "add": lambda rng: _binary(rng, ops.add, (3, 4), (4,)),
    "sub": lambda rng: _binary(rng, ops.sub, (2, 1, 4), (3, 4)),
    "mul": lambda rng: _binary(rng, ops.mul, (2, 3, 4), (3, 1)),
    "scalar-mul": lambda rng: _unary(rng, lambda t: ops.scale(t, -1.7)),
    "matmul": lambda rng: _binary(rng, ops.matmul, (2, 3, 4), (4, 5)),
    "matmul-batched": lambda rng: _binary(rng, ops.matmul, (2, 3, 4), (2, 4, 2)),
    "conv2d": _case_conv,
    "conv2d-1x1": lambda rng: _binary(rng, ops.conv2d, (2, 3, 4, 4), (2, 3, 1, 1)),
    "transpose": lambda rng: _unary(rng, lambda t: ops.transpose(t, (2, 0, 1)), (2, 3, 4)),
    "reshape": lambda rng: _unary(rng, lambda t: ops.reshape(t, (4, 6)), (2, 3, 4)),
    "concat-channels": _case_concat,
    "slice": _case_slice,
    "mean": lambda rng: _unary(rng, lambda t: ops.mean(t, axis=1), (3, 4, 2)),
    "sum": lambda rng: _unary(rng, lambda t: ops.sum_(t, axis=(0, 2), keepdims=True), (3, 4, 2)),
    "abs": lambda rng: _unary(rng, ops.abs_, x=_away(rng, (3, 4))),
    "exp": lambda rng: _unary(rng, ops.exp),
    "relu": _case_activation("relu"),
    "gelu": _case_activation("gelu"),
    "leaky-relu": _case_activation("leaky-relu"),
    "elu": _case_activation("elu"),
    "selu": _case_activation("selu"),
    "layer-stat-normalize": lambda rng: _unary(rng, ops.layer_norm, (4, 6)),
    "column-standardize": lambda rng: _unary(rng, ops.column_standardize, (2, 7, 3)),
    "gather-weighted": _case_gather,
    "separable-linear": _case_separable,
    "linear": lambda rng: _module(rng, Linear(5, 3, rng), lambda: rng.standard_normal((4, 5))),
    "encoder": _case_encoder,
    "sampler-render": _case_render,
    "galerkin-attention": _case_attention,
    "decoder": _case_decoder,
    "model": _case_model,
}

COMPOSITES = ("linear", "encoder", "sampler-render", "galerkin-attention", "decoder", "model")


@dataclass
class CheckResult:
    name: str
    error: float
    passed: bool
    params: int


def run_check(name: str, seed: int = 0, tol: float = TOLERANCE) -> CheckResult:
    if name not in CASES:
        raise KeyError(f"unknown grad-check case {name!r}; choose from {sorted(CASES)}")
    with precision(np.float64):
        rng = np.random.default_rng([seed, sum(name.encode())])
        fn, params = CASES[name](rng)
        err = grad_check(fn, params)
    return CheckResult(name, err, bool(err < tol), int(sum(p.data.size for p in params)))


def run_checks(names=None, seed: int = 0, tol: float = TOLERANCE) -> list[CheckResult]:
    return [run_check(n, seed, tol) for n in (names or list(CASES))]
