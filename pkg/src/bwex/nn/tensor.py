"""Parameter containers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from bwex.errors import ConfigError, ShapeError


@dataclass
class Tensor:
    """Dense array of rank <= 3 with an optional gradient of the same shape."""

    data: np.ndarray
    grad: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim > 3:
            raise ShapeError(f"tensors have rank <= 3, got shape {self.data.shape}")
        if self.data.size == 0:
            raise ShapeError(f"tensor has an empty axis: {self.data.shape}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {self.data.shape}")
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None


@dataclass
class ParamStore:
    """Named parameters (theta), non-trainable buffers and ADAM state.

    Insertion order is preserved and defines the checkpoint record order.
    """

    params: dict[str, Tensor] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params or name in self.buffers:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(data)
        self.params[name] = t
        return t

    def add_buffer(self, name: str, data: np.ndarray) -> None:
        if name in self.params or name in self.buffers:
            raise ConfigError(f"duplicate buffer name {name!r}")
        self.buffers[name] = np.asarray(data)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self) -> int:
        return len(self.params)

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None
