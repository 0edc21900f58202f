"""Central finite-difference checks for analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def numerical_grad(f: Callable[[], Tensor], x: Tensor, eps: float = 1e-5, coords=None) -> np.ndarray:
    """(f(x+eps) - f(x-eps)) / 2eps at every coordinate in ``coords`` (default: all)."""
    flat = x.data.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    out = np.zeros(flat.size, dtype=np.float64)
    with no_grad():
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f().data)
            flat[i] = orig - eps
            fm = float(f().data)
            flat[i] = orig
            out[i] = (fp - fm) / (2 * eps)
    return out.reshape(x.dims)


def relative_error(analytic, numeric, floor: float = 1e-7) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def grad_check(f: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
               max_coords: int | None = None, rng=None, floor: float = 1e-7) -> float:
    """Max relative error between backprop and central differences of scalar ``f``.

    ``f`` is re-evaluated with the inputs perturbed in place.  When
    ``max_coords`` is given, only that many randomly chosen coordinates per
    input are probed (large parameter tensors).
    """
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    f().backward()
    analytic = [np.zeros(t.dims) if t.grad is None else t.grad.copy() for t in inputs]
    rng = np.random.default_rng(0) if rng is None else rng
    worst = 0.0
    for t, a in zip(inputs, analytic):
        size = t.data.size
        if max_coords is not None and size > max_coords:
            coords = np.sort(rng.choice(size, size=max_coords, replace=False))
        else:
            coords = np.arange(size)
        num = numerical_grad(f, t, eps, coords).reshape(-1)[coords]
        worst = max(worst, relative_error(a.reshape(-1)[coords], num, floor))
    return worst
