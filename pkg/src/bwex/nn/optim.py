"""ADAM with bias correction, applied in place to a ParamStore."""

from __future__ import annotations

import numpy as np

from bwex.errors import UsageError
from bwex.nn.tensor import ParamStore


def clip_grad_norm(store: ParamStore, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    total = float(np.sqrt(sum(float(np.sum(t.grad.astype(np.float64) ** 2))
                              for t in store.params.values() if t.grad is not None)))
    if total > max_norm > 0:
        scale = max_norm / total
        for t in store.params.values():
            if t.grad is not None:
                t.grad *= scale
    return total


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One ADAM update of every parameter; gradients are cleared afterwards."""
    for name, t in store:
        if t.grad is None:
            raise UsageError(f"parameter {name!r} has no gradient; run backward before adam_step")

    store.step += 1
    bc1 = 1.0 - beta1**store.step
    bc2 = 1.0 - beta2**store.step
    for name, t in store:
        g = t.grad
        if name not in store.m:
            store.m[name] = np.zeros_like(t.data)
            store.v[name] = np.zeros_like(t.data)
        m, v = store.m[name], store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        t.data -= (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(t.data.dtype, copy=False)
        t.grad = None
