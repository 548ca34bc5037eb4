"""Parameter containers: a minimal module tree plus dense and conv layers."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import ops
from .tensor import DiffTensor, default_dtype


def glorot(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(default_dtype())


def Parameter(data: np.ndarray) -> DiffTensor:
    return DiffTensor(np.ascontiguousarray(data, dtype=default_dtype()), requires_grad=True)


class Module:
    """Parameters and submodules are discovered from instance attributes, in
    assignment order, which fixes the checkpoint layout."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, DiffTensor]]:
        for name, value in vars(self).items():
            if isinstance(value, DiffTensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[DiffTensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {value.shape}")
            p.data = np.ascontiguousarray(value, dtype=p.data.dtype)
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    """Dense map over the last axis."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(glorot(rng, (d_in, d_out), d_in, d_out))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def forward(self, x):
        y = ops.matmul(x, self.weight)
        return ops.add(y, self.bias) if self.bias is not None else y


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, bias: bool = True):
        fan_in, fan_out = c_in * k * k, c_out * k * k
        self.weight = Parameter(glorot(rng, (c_out, c_in, k, k), fan_in, fan_out))
        self.bias = Parameter(np.zeros(c_out)) if bias else None

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias)


class MLP(Module):
    """Two dense layers with an activation between them."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng, act: str = "gelu"):
        self.fc1 = Linear(d_in, d_hidden, rng)
        self.fc2 = Linear(d_hidden, d_out, rng)
        self.act = act

    def forward(self, x):
        return self.fc2(ops.activation(self.fc1(x), self.act))
