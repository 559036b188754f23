"""Stateful layers wrapping the kernels in :mod:`bwex.nn.functional`.

Layers register their parameters in a shared :class:`ParamStore` under a
dotted prefix, cache what backward needs during forward, and accumulate
parameter gradients in backward.
"""

from __future__ import annotations

import numpy as np

from bwex.errors import UsageError
from bwex.nn import functional as F
from bwex.nn.tensor import ParamStore

BN_MOMENTUM = 0.99


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Module:
    """Base class: ``forward`` caches, ``backward`` consumes the cache."""

    training = True

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError

    def __call__(self, x):
        return self.forward(x)

    def train(self, mode: bool = True):
        self.training = mode
        for child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def children(self):
        return []


class Conv1d(Module):
    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int, kernel: int,
                 stride: int = 1, rng=None, dtype=np.float32):
        rng = np.random.default_rng(0) if rng is None else rng
        self.name, self.stride = name, stride
        self.weight = store.add(f"{name}.weight",
                                glorot_uniform(rng, (c_out, c_in, kernel), c_in * kernel, c_out * kernel, dtype))
        self.bias = store.add(f"{name}.bias", np.zeros(c_out, dtype=dtype))
        self._cache = None

    def forward(self, x):
        out, self._cache = F.conv1d_forward(x, self.weight.data, self.bias.data, self.stride)
        return out

    def backward(self, grad_out):
        if self._cache is None:
            raise UsageError(f"{self.name}: backward called before forward")
        dx, dw, db = F.conv1d_backward(grad_out, self._cache)
        self.weight.accumulate(dw)
        self.bias.accumulate(db)
        self._cache = None
        return dx


class BatchNorm1d(Module):
    """Batch norm with running statistics seeded from the first training batch.

    Until one training-mode forward has run there are no running statistics
    and inference raises :class:`UsageError`.
    """

    def __init__(self, store: ParamStore, name: str, channels: int, dtype=np.float32,
                 momentum: float = BN_MOMENTUM):
        self.name, self.momentum = name, momentum
        self.store = store
        self.gamma = store.add(f"{name}.gamma", np.ones(channels, dtype=dtype))
        self.beta = store.add(f"{name}.beta", np.zeros(channels, dtype=dtype))
        store.add_buffer(f"{name}.running_mean", np.zeros(channels, dtype=dtype))
        store.add_buffer(f"{name}.running_var", np.ones(channels, dtype=dtype))
        store.add_buffer(f"{name}.num_batches", np.zeros(1, dtype=dtype))
        self._cache = None

    @property
    def has_running_stats(self) -> bool:
        return bool(self.store.buffers[f"{self.name}.num_batches"][0] > 0)

    def forward(self, x):
        buf = self.store.buffers
        if self.training:
            out, self._cache = F.batchnorm_forward(x, self.gamma.data, self.beta.data, "train")
            mean, var = self._cache[4], self._cache[5]
            rm, rv = buf[f"{self.name}.running_mean"], buf[f"{self.name}.running_var"]
            if self.has_running_stats:
                rm *= self.momentum
                rm += (1.0 - self.momentum) * mean
                rv *= self.momentum
                rv += (1.0 - self.momentum) * var
            else:
                rm[...] = mean
                rv[...] = var
            buf[f"{self.name}.num_batches"] += 1
            return out
        if not self.has_running_stats:
            raise UsageError(f"{self.name}: inference before any training step (no running statistics)")
        out, self._cache = F.batchnorm_forward(
            x, self.gamma.data, self.beta.data, "infer",
            buf[f"{self.name}.running_mean"], buf[f"{self.name}.running_var"],
        )
        return out

    def backward(self, grad_out):
        if self._cache is None:
            raise UsageError(f"{self.name}: backward called before forward")
        dx, dgamma, dbeta = F.batchnorm_backward(grad_out, self._cache)
        self.gamma.accumulate(dgamma)
        self.beta.accumulate(dbeta)
        self._cache = None
        return dx


class ReLU(Module):
    def __init__(self):
        self.mask = None

    def forward(self, x):
        out, self.mask = F.relu_forward(x)
        return out

    def backward(self, grad_out):
        if self.mask is None:
            raise UsageError("ReLU: backward called before forward")
        return F.relu_backward(grad_out, self.mask)


class SubpixelShuffle1d(Module):
    def forward(self, x):
        return F.subpixel_shuffle_1d(x)

    def backward(self, grad_out):
        return F.subpixel_unshuffle_1d(grad_out)


class Linear(Module):
    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int, rng=None, dtype=np.float32):
        rng = np.random.default_rng(0) if rng is None else rng
        self.name = name
        self.weight = store.add(f"{name}.weight", glorot_uniform(rng, (n_in, n_out), n_in, n_out, dtype))
        self.bias = store.add(f"{name}.bias", np.zeros(n_out, dtype=dtype))
        self._cache = None

    def forward(self, x):
        out, self._cache = F.linear_forward(x, self.weight.data, self.bias.data)
        return out

    def backward(self, grad_out):
        if self._cache is None:
            raise UsageError(f"{self.name}: backward called before forward")
        dx, dw, db = F.linear_backward(grad_out, self._cache)
        self.weight.accumulate(dw)
        self.bias.accumulate(db)
        self._cache = None
        return dx


class Sequential(Module):
    def __init__(self, *layers: Module):
        self.layers = list(layers)

    def children(self):
        return self.layers

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad_out):
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out

    def relu_signature(self) -> np.ndarray:
        masks = [l.mask.ravel() for l in self.layers if isinstance(l, ReLU) and l.mask is not None]
        return np.concatenate(masks) if masks else np.zeros(0, dtype=bool)
