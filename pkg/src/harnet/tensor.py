"""Minimal reverse-mode autodiff over numpy arrays.

A :class:`Tensor` wraps an ``ndarray`` and, when produced by an op while
gradient recording is enabled, remembers its parents and a closure mapping
the output gradient to one gradient per parent.  Shapes are never broadcast
implicitly: every op checks its operands and raises :class:`ShapeError`.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / finite differences)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """Dense array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable | None = None

    @property
    def dims(self) -> tuple:
        return self.data.shape

    shape = dims

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_err(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(dims={self.dims}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got dims {self.dims}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise ShapeError(f"seed gradient dims {grad.shape} != tensor dims {self.dims}")

        order = _topological(self)
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _scalar_err(t):
    raise ShapeError(f"item() needs a single element, got dims {t.dims}")


def _topological(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def apply_op(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap ``data`` as the output of an op.

    ``backward(grad_out)`` must return one array (or None) per parent.
    """
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _same_dims(a: Tensor, b: Tensor, op: str) -> None:
    if a.dims != b.dims:
        raise ShapeError(f"{op}: dims {a.dims} and {b.dims} differ (no broadcasting)")


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_dims(a, b, "add")
    return apply_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_dims(a, b, "sub")
    return apply_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_dims(a, b, "mul")
    ad, bd = a.data, b.data
    return apply_op(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, factor: float) -> Tensor:
    return apply_op(a.data * factor, (a,), lambda g: (g * factor,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return apply_op(np.maximum(x.data, 0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)
    # keep the open interval even where expit saturates
    fi = np.finfo(s.dtype)
    s = np.clip(s, fi.tiny, 1.0 - fi.epsneg)
    return apply_op(s, (x,), lambda g: (g * s * (1.0 - s),))


def sum_all(x: Tensor) -> Tensor:
    shape = x.dims
    return apply_op(np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                    lambda g: (np.broadcast_to(g, shape).copy(),))


def dot(x: Tensor, w) -> Tensor:
    """Scalar <x, w> for a fixed array ``w`` of identical shape (test projections)."""
    w = np.asarray(w, dtype=x.dtype)
    if w.shape != x.dims:
        raise ShapeError(f"dot: dims {x.dims} and {w.shape} differ")
    return apply_op(np.asarray((x.data * w).sum(), dtype=x.dtype), (x,), lambda g: (g * w,))


# -------------------------------------------------------------------- shapes


def reshape(x: Tensor, shape) -> Tensor:
    src = x.dims
    return apply_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return apply_op(np.ascontiguousarray(x.data.transpose(axes)), (x,), lambda g: (g.transpose(inv),))


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    if not xs:
        raise ShapeError("concat of an empty list")
    ref = list(xs[0].dims)
    for t in xs[1:]:
        d = list(t.dims)
        if len(d) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(d, ref)) if i != axis % len(ref)):
            raise ShapeError(f"concat: dims {t.dims} incompatible with {xs[0].dims} on axis {axis}")
    bounds = np.cumsum([t.dims[axis] for t in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return apply_op(np.concatenate([t.data for t in xs], axis=axis), tuple(xs), backward)


def take(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice ``[start:stop]`` along ``axis``."""
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    src, dtype = x.dims, x.dtype

    def backward(g):
        full = np.zeros(src, dtype=dtype)
        full[idx] = g
        return (full,)

    return apply_op(x.data[idx], (x,), backward)


def upsample_nearest(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Nearest 2x upsampling of N×C×H×W, cropped to (out_h, out_w) for odd targets."""
    n, c, h, w = x.dims
    if not (2 * h - 1 <= out_h <= 2 * h and 2 * w - 1 <= out_w <= 2 * w):
        raise ShapeError(f"upsample_nearest: {h}x{w} cannot reach {out_h}x{out_w} by 2x")
    up = x.data.repeat(2, axis=2).repeat(2, axis=3)[:, :, :out_h, :out_w]

    def backward(g):
        full = np.zeros((n, c, 2 * h, 2 * w), dtype=g.dtype)
        full[:, :, :out_h, :out_w] = g
        return (full.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return apply_op(np.ascontiguousarray(up), (x,), backward)


# -------------------------------------------------------------- reductions


def global_max_pool(x: Tensor) -> Tensor:
    """Per-channel spatial maximum, N×C×H×W -> N×C.

    The gradient goes to the first (lowest linear index) maximum.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"global_max_pool expects N×C×H×W, got {x.dims}")
    n, c, h, w = x.dims
    flat = x.data.reshape(n, c, h * w)
    arg = flat.argmax(axis=2)
    out = np.take_along_axis(flat, arg[:, :, None], axis=2)[:, :, 0]

    def backward(g):
        gx = np.zeros((n, c, h * w), dtype=g.dtype)
        np.put_along_axis(gx, arg[:, :, None], g[:, :, None], axis=2)
        return (gx.reshape(n, c, h, w),)

    return apply_op(out, (x,), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x (N×D) @ weight.T (D×O) + bias (O)."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.dims[1] != weight.dims[1]:
        raise ShapeError(f"linear: input {x.dims} vs weight {weight.dims}")
    if bias is not None and bias.dims != (weight.dims[0],):
        raise ShapeError(f"linear: bias {bias.dims} vs weight {weight.dims}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        gx = g @ wd if x.requires_grad else None
        gw = g.T @ xd if weight.requires_grad else None
        gb = g.sum(axis=0) if bias is not None and bias.requires_grad else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return apply_op(out, parents, backward)


# ----------------------------------------------------- explicit re-weighting


def scale_spatial(mask: Tensor, x: Tensor) -> Tensor:
    """out[n,c,i,j] = mask[n,0,i,j] * x[n,c,i,j]."""
    if mask.data.ndim != 4 or x.data.ndim != 4 or mask.dims[1] != 1 or \
            mask.dims[0] != x.dims[0] or mask.dims[2:] != x.dims[2:]:
        raise ShapeError(f"scale_spatial: mask {mask.dims} vs features {x.dims}")
    md, xd = mask.data, x.data

    def backward(g):
        gm = (g * xd).sum(axis=1, keepdims=True) if mask.requires_grad else None
        return gm, g * md

    return apply_op(md * xd, (mask, x), backward)


def scale_channels(weights: Tensor, x: Tensor) -> Tensor:
    """out[n,c,i,j] = w[n,c] * x[n,c,i,j]; a length-C vector applies to every image."""
    if x.data.ndim != 4:
        raise ShapeError(f"scale_channels expects N×C×H×W features, got {x.dims}")
    n, c = x.dims[:2]
    per_image = weights.data.ndim == 2
    if (per_image and weights.dims != (n, c)) or (not per_image and weights.dims != (c,)):
        raise ShapeError(f"scale_channels: weights {weights.dims} vs features {x.dims}")
    wd = weights.data[:, :, None, None] if per_image else weights.data[None, :, None, None]
    xd = x.data

    def backward(g):
        gw = None
        if weights.requires_grad:
            gw = (g * xd).sum(axis=(2, 3))
            if not per_image:
                gw = gw.sum(axis=0)
        return gw, g * wd

    return apply_op(wd * xd, (weights, x), backward)
