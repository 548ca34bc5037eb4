"""Central finite-difference gradient checks."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import DiffTensor, Tape, debug_mode


def analytic_grads(fn: Callable[[], DiffTensor], params: Sequence[DiffTensor]) -> list[np.ndarray]:
    for p in params:
        p.zero_grad()
    with debug_mode(), Tape() as tape:
        loss = fn()
    tape.backward(loss)
    return [p.grad.copy() for p in params]


def grad_check(
    fn: Callable[[], DiffTensor],
    params: Sequence[DiffTensor],
    eps: float = 1e-5,
    floor: float = 1e-8,
) -> float:
    """Max over all parameter entries of |analytic - numeric| / max(floor, |analytic|).

    ``fn`` must rebuild the scalar loss from ``params`` on each call.  All
    parameters must be float64.
    """
    for p in params:
        if p.data.dtype != np.float64:
            raise TypeError(f"grad_check needs float64 parameters, got {p.data.dtype}")
        if not p.requires_grad:
            raise ValueError("grad_check parameters must require grad")
    analytic = analytic_grads(fn, params)
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        if not np.shares_memory(flat, p.data):
            raise ValueError("parameter data must be contiguous")
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            fp = float(fn().data)
            flat[i] = old - eps
            fm = float(fn().data)
            flat[i] = old
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(f"non-finite loss while perturbing entry {i}")
            num = (fp - fm) / (2 * eps)
            ai = float(a.reshape(-1)[i])
            worst = max(worst, abs(ai - num) / max(floor, abs(ai)))
    return worst
