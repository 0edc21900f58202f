"""Named learnable tensors and the momentum SGD update."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .errors import StateError
from .tensor import Tensor


class NetParams:
    """Ordered name -> Tensor mapping plus per-parameter momentum buffers."""

    def __init__(self, tensors: dict | None = None):
        self.tensors: dict[str, Tensor] = {}
        self.velocity: dict[str, np.ndarray] = {}
        for name, value in (tensors or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> Tensor:
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        self.tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def get(self, name: str):
        return self.tensors.get(name)

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def names(self) -> list:
        return list(self.tensors)

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def copy(self, dtype=None) -> "NetParams":
        out = NetParams()
        for name, t in self.tensors.items():
            out.add(name, Tensor(t.data.astype(dtype or t.dtype, copy=True)))
        return out

    def num_values(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def equal(self, other: "NetParams") -> bool:
        """Bitwise equality of names, dims, dtypes and values."""
        if self.names() != other.names():
            return False
        return all(a.data.dtype == b.data.dtype and a.data.shape == b.data.shape
                   and a.data.tobytes() == b.data.tobytes()
                   for a, b in zip(self.tensors.values(), other.tensors.values()))


def sgd_step(params: NetParams, lr: float, momentum: float, weight_decay: float,
             names: Iterable[str] | None = None) -> None:
    """v <- momentum*v + grad + weight_decay*w ; w <- w - lr*v ; grads cleared.

    Only ``names`` (default: all) are updated; each must carry a gradient.
    """
    selected = params.names() if names is None else list(names)
    missing = [n for n in selected if params[n].grad is None]
    if missing:
        raise StateError(f"no gradient for {len(missing)} parameter(s), e.g. {missing[0]!r}")
    for name in selected:
        t = params[name]
        g = t.grad.astype(t.dtype, copy=False)
        v = params.velocity.get(name)
        v = g + weight_decay * t.data if v is None else momentum * v + g + weight_decay * t.data
        params.velocity[name] = v
        t.data -= (lr * v).astype(t.dtype, copy=False)
    params.zero_grad()
