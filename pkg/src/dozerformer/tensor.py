"""A small float64 tensor with eager reverse-mode autodiff.

Each differentiable op records its parents and a closure mapping the output
gradient to one gradient per parent.  ``backward`` walks the graph once in
reverse topological order and accumulates into the ``grad`` of leaf tensors
that require it.  Broadcasting follows numpy; gradients are summed back to
the operand shape.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import count
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels
from .errors import ContractError, DimensionError, InvalidMaskError

_ids = count()

SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Dense float64 array that can take part in an autodiff graph."""

    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self.node_id = next(_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    # -- bookkeeping -------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    @staticmethod
    def _make(data, parents: Iterable["Tensor"], grad_fn) -> "Tensor":
        parents = tuple(parents)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.name = None
        out.node_id = next(_ids)
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._grad_fn = grad_fn
        else:
            out._parents = ()
            out._grad_fn = None
        return out

    # -- autodiff ----------------------------------------------------------
    def backward(self) -> None:
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if node.node_id in seen:
                continue
            seen.add(node.node_id)
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and p.node_id not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {self.node_id: np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(node.node_id, None)
            if g is None:
                continue
            if node._grad_fn is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._grad_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(parent.node_id)
                grads[parent.node_id] = pg if prev is None else prev + pg

    # -- elementwise -------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def fn(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor._make(a.data + b.data, (a, b), fn)

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def fn(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        return Tensor._make(a.data - b.data, (a, b), fn)

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def fn(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

        return Tensor._make(a.data * b.data, (a, b), fn)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def fn(g):
            return (_unbroadcast(g / b.data, a.shape),
                    _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        return Tensor._make(a.data / b.data, (a, b), fn)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, exponent: float):
        if isinstance(exponent, Tensor):
            raise TypeError("only scalar exponents are supported")
        a = self

        def fn(g):
            return (g * exponent * a.data ** (exponent - 1),)

        return Tensor._make(a.data ** exponent, (a,), fn)

    def exp(self):
        out_data = np.exp(self.data)
        return Tensor._make(out_data, (self,), lambda g: (g * out_data,))

    def tanh(self):
        out_data = np.tanh(self.data)
        return Tensor._make(out_data, (self,), lambda g: (g * (1.0 - out_data ** 2),))

    def relu(self):
        pos = self.data > 0
        return Tensor._make(self.data * pos, (self,), lambda g: (g * pos,))

    def gelu(self):
        """Tanh-approximated GELU."""
        x = self.data
        inner = SQRT_2_OVER_PI * (x + 0.044715 * x ** 3)
        t = np.tanh(inner)
        out_data = 0.5 * x * (1.0 + t)

        def fn(g):
            d_inner = SQRT_2_OVER_PI * (1.0 + 3 * 0.044715 * x ** 2)
            return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * d_inner),)

        return Tensor._make(out_data, (self,), fn)

    # -- reductions --------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        a = self

        def fn(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a.shape).copy(),)

        return Tensor._make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), fn)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod([self.shape[ax] for ax in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- shape -------------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.shape
        return Tensor._make(self.data.reshape(shape), (self,), lambda g: (g.reshape(src),))

    def transpose(self, *axes):
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = tuple(np.argsort(axes))
        return Tensor._make(self.data.transpose(axes), (self,), lambda g: (g.transpose(inverse),))

    def swapaxes(self, a1: int, a2: int):
        return Tensor._make(self.data.swapaxes(a1, a2), (self,), lambda g: (g.swapaxes(a1, a2),))

    @property
    def T(self):
        return self.swapaxes(-1, -2)

    def __getitem__(self, index):
        src = self.shape

        parts = index if isinstance(index, tuple) else (index,)
        basic = all(p is None or p is Ellipsis or isinstance(p, (int, np.integer, slice)) for p in parts)

        def fn(g):
            full = np.zeros(src)
            if basic:
                full[index] = g
            else:
                np.add.at(full, index, g)
            return (full,)

        return Tensor._make(np.array(self.data[index]), (self,), fn)

    # -- linear algebra ----------------------------------------------------
    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __rmatmul__(self, other):
        return matmul(as_tensor(other), self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, batch axes broadcast."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def fn(g):
        da = g @ b.data.swapaxes(-1, -2)
        db = a.data.swapaxes(-1, -2) @ g
        return _unbroadcast(da, a.shape), _unbroadcast(db, b.shape)

    return Tensor._make(a.data @ b.data, (a, b), fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tensors, fn)


def masked_softmax(scores: Tensor, mask) -> Tensor:
    """Softmax over the last axis restricted to ``mask``; masked entries are exactly 0.

    ``mask`` is a (q, k) boolean array (or AttnMask) broadcast over the
    leading axes of ``scores``.
    """
    m = np.asarray(getattr(mask, "bits", mask), dtype=bool)
    if m.shape != scores.shape[-2:]:
        raise DimensionError(f"mask shape {m.shape} does not match scores {scores.shape}")
    empty = np.flatnonzero(~m.any(axis=1))
    if empty.size:
        raise InvalidMaskError(f"mask row {int(empty[0])} has no allowed key")
    flat = np.ascontiguousarray(scores.data.reshape(-1, *m.shape))
    y = _kernels.kernels.masked_softmax(flat, m)

    def fn(g):
        dx = _kernels.kernels.masked_softmax_backward(y, np.ascontiguousarray(g.reshape(y.shape)))
        return (dx.reshape(scores.shape),)

    return Tensor._make(y.reshape(scores.shape), (scores,), fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered * (var + eps) ** -0.5 * gain + bias


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rng is None or rate <= 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    return x * (keep / (1.0 - rate))


def finite_diff_grad(f: Callable[[Tensor], object], params: Tensor, eps: float = 1e-5) -> Tensor:
    """Central-difference gradient of scalar ``f(params)``; ``params`` is restored afterwards."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    flat = params.data.reshape(-1)
    out = np.zeros(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = _scalar(f(params))
        flat[i] = orig - eps
        lo = _scalar(f(params))
        flat[i] = orig
        out[i] = (hi - lo) / (2.0 * eps)
    return Tensor(out.reshape(params.shape))


def _scalar(v) -> float:
    return float(v.data) if isinstance(v, Tensor) else float(v)


@dataclass
class GradCheckReport:
    max_relative_error: float
    worst_parameter_index: int
    analytic: float
    numeric: float

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_relative_error <= tol


def grad_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
               floor: float = 1e-6) -> GradCheckReport:
    """Compare backward() gradients of ``loss_fn()`` with central differences.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``; the floor keeps
    near-zero gradients from dominating on round-off.  The worst index is
    flattened across ``params`` in order.
    """
    for p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = np.concatenate([
        (p.grad if p.grad is not None else np.zeros(p.shape)).reshape(-1) for p in params
    ])
    numeric = np.concatenate([
        finite_diff_grad(lambda _p: loss_fn(), p, eps).data.reshape(-1) for p in params
    ])
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel = np.abs(analytic - numeric) / denom
    worst = int(np.argmax(rel)) if rel.size else 0
    return GradCheckReport(
        max_relative_error=float(rel[worst]) if rel.size else 0.0,
        worst_parameter_index=worst,
        analytic=float(analytic[worst]) if rel.size else 0.0,
        numeric=float(numeric[worst]) if rel.size else 0.0,
    )
