"""Dense tensors with reverse-mode gradient accumulation.

A :class:`Tensor` wraps a numpy array.  Operations on tensors that require
gradients record a closure mapping the output gradient to one gradient per
parent; :meth:`Tensor.backward` walks that graph in reverse topological order
and adds the results into the ``grad`` slot of every leaf that asked for one.
Grad slots are never cleared implicitly.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from ..errors import InvalidParameterError, InvalidShapeError, InvalidTokenError
from ..errors import DegenerateBatchError, NonFiniteError

_state = {"grad_enabled": True, "check_finite": True, "dtype": np.dtype(np.float32)}


def default_dtype() -> np.dtype:
    return _state["dtype"]


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise InvalidParameterError(f"unsupported dtype {dtype}")
    _state["dtype"] = dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype used for newly created float tensors."""
    previous = _state["dtype"]
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = previous


@contextlib.contextmanager
def no_grad():
    previous = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = previous


def is_grad_enabled() -> bool:
    return _state["grad_enabled"]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A dense float array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype.kind != "f":
            arr = arr.astype(default_dtype())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple = ()
        self._backward: Callable | None = None

    # -- inspection -------------------------------------------------------
    @property
    def dims(self) -> tuple:
        return self.data.shape

    shape = dims

    @property
    def values(self) -> np.ndarray:
        return self.data.reshape(-1)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(dims={self.dims}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- autograd -----------------------------------------------------------
    def backward(self, grad=None) -> None:
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise InvalidShapeError("implicit gradient only defined for scalar outputs")
            grad = np.ones_like(self.data)
        grads = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(self._topo_order()):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.astype(node.dtype, copy=True) if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

    def _topo_order(self) -> list:
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return order

    # -- operators ------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other, self.dtype)))

    def __rsub__(self, other):
        return add(_lift(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_lift(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis, keepdims)


def _lift(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or default_dtype()))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    if _state["check_finite"] and data.dtype.kind == "f" and not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite values produced by {backward.__qualname__.split('.')[0]}")
    out = Tensor(data)
    if _state["grad_enabled"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# -- elementwise --------------------------------------------------------------


def add(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, a.dtype)

    def add_backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), add_backward)


def neg(a: Tensor) -> Tensor:
    def neg_backward(g):
        return (-g,)

    return _make(-a.data, (a,), neg_backward)


def mul(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, a.dtype)

    def mul_backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), mul_backward)


def scale(a: Tensor, c: float) -> Tensor:
    def scale_backward(g):
        return (g * c,)

    return _make(a.data * c, (a,), scale_backward)


def div(a, b) -> Tensor:
    a = _lift(a)
    b = _lift(b, a.dtype)

    def div_backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    return _make(out, (a, b), div_backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def exp_backward(g):
        return (g * out,)

    return _make(out, (a,), exp_backward)


def log(a: Tensor, floor: float = 1e-12) -> Tensor:
    """Natural log with the argument clamped below at ``floor``."""
    x = np.maximum(a.data, floor)

    def log_backward(g):
        return (np.where(a.data > floor, g / x, 0.0).astype(a.dtype),)

    return _make(np.log(x), (a,), log_backward)


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))

    def gelu_backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _make(0.5 * x * (1.0 + t), (a,), gelu_backward)


# -- shape and reduction ----------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    def reshape_backward(g):
        return (g.reshape(a.shape),)

    return _make(a.data.reshape(shape), (a,), reshape_backward)


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))

    def transpose_backward(g):
        return (g.transpose(inverse),)

    return _make(a.data.transpose(axes), (a,), transpose_backward)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def sum_backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), sum_backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(tsum(a, axis, keepdims), 1.0 / float(count))


def take(a: Tensor, index) -> Tensor:
    """Basic or fancy indexing; repeated indices accumulate in the gradient."""

    def take_backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)

    return _make(np.asarray(a.data[index]), (a,), take_backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def concat_backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, concat_backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes, broadcasting leading axes."""
    a = _lift(a)
    b = _lift(b, a.dtype)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise InvalidShapeError(f"matmul shapes {a.shape} and {b.shape} do not align")

    def matmul_backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), matmul_backward)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]``; output dims ``ids.shape + (d,)``."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise InvalidTokenError(f"token id outside [0, {table.shape[0]})")

    def embedding_backward(g):
        out = np.zeros_like(table.data)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (out,)

    return _make(table.data[ids], (table,), embedding_backward)


# -- normalisation family ------------------------------------------------------------


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def softmax_rows(t: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max subtraction."""
    if t.ndim == 0 or t.shape[-1] == 0:
        raise InvalidShapeError("softmax over an empty last dimension")
    y = _softmax(t.data)

    def softmax_backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (t,), softmax_backward)


def logsumexp(t: Tensor, axis: int = -1) -> Tensor:
    if t.shape[axis] == 0:
        raise InvalidShapeError("logsumexp over an empty axis")
    m = t.data.max(axis=axis, keepdims=True)
    shifted = np.exp(t.data - m)
    total = shifted.sum(axis=axis, keepdims=True)
    out = (np.log(total) + m).squeeze(axis)

    def logsumexp_backward(g):
        return (np.expand_dims(g, axis) * shifted / total,)

    return _make(out, (t,), logsumexp_backward)


def layer_norm(t: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    d = t.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise InvalidShapeError(f"layer_norm over width {d} with gain {gain.shape} and bias {bias.shape}")
    if eps <= 0:
        raise InvalidParameterError("layer_norm eps must be positive")
    x = t.data
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std

    def layer_norm_backward(g):
        lead = tuple(range(g.ndim - 1))
        gx = None
        if t.requires_grad:
            gxhat = g * gain.data
            gx = inv_std * (
                gxhat
                - gxhat.mean(axis=-1, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
            )
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(xhat * gain.data + bias.data, (t, gain, bias), layer_norm_backward)


def l2_normalize(t: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each last-axis row to unit Euclidean norm (norm floored at ``eps``)."""
    norm = np.maximum(np.sqrt((t.data * t.data).sum(axis=-1, keepdims=True)), eps)
    y = t.data / norm

    def l2_normalize_backward(g):
        return ((g - y * (g * y).sum(axis=-1, keepdims=True)) / norm,)

    return _make(y, (t,), l2_normalize_backward)


# -- stochastic -------------------------------------------------------------------


def dropout(t: Tensor, p: float, rng) -> tuple[Tensor, Tensor]:
    """Inverted dropout.

    Each element is zeroed independently with probability ``p``; survivors are
    scaled by ``1/(1-p)``.  Returns ``(output, keep_mask)`` where the mask holds
    1 for survivors and 0 for dropped elements.
    """
    if not 0.0 <= p < 1.0:
        raise InvalidParameterError(f"dropout rate must lie in [0, 1), got {p}")
    keep = (rng.uniform(t.shape) >= p).astype(t.dtype)
    return apply_dropout_mask(t, keep, p), Tensor(keep)


def apply_dropout_mask(t: Tensor, keep: np.ndarray, p: float) -> Tensor:
    """Inverted dropout with a precomputed 0/1 ``keep`` mask."""
    if not 0.0 <= p < 1.0:
        raise InvalidParameterError(f"dropout rate must lie in [0, 1), got {p}")
    if keep.shape != t.shape:
        raise InvalidShapeError(f"dropout mask {keep.shape} does not match tensor {t.shape}")
    if p == 0.0:
        return t
    factor = keep.astype(t.dtype) * t.dtype.type(1.0 / (1.0 - p))

    def dropout_backward(g):
        return (g * factor,)

    return _make(t.data * factor, (t,), dropout_backward)


# -- losses ---------------------------------------------------------------------------


def cross_entropy_mean(logits: Tensor, targets, mask, reduction: str = "mean") -> Tensor:
    """Masked token cross-entropy.

    ``logits`` has dims ``[..., V]``; ``targets`` and ``mask`` share the
    leading dims.  Returns the mean (or sum) over masked-in positions of
    ``-log softmax(logits)[target]``.
    """
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask)
    V = logits.shape[-1]
    if targets.shape != logits.shape[:-1] or mask.shape != targets.shape:
        raise InvalidShapeError(f"logits {logits.shape} vs targets {targets.shape} / mask {mask.shape}")
    if reduction not in ("mean", "sum"):
        raise InvalidParameterError(f"unknown reduction {reduction!r}")
    on = mask != 0
    count = int(on.sum())
    if count == 0:
        raise DegenerateBatchError("cross-entropy mask selects no positions")
    picked = targets[on]
    if picked.min() < 0 or picked.max() >= V:
        raise InvalidTokenError(f"target id outside [0, {V})")
    x = logits.data
    safe_targets = np.where(on, targets, 0)
    m = x.max(axis=-1, keepdims=True)
    shifted = np.exp(x - m)
    total = shifted.sum(axis=-1, keepdims=True)
    lse = (np.log(total) + m)[..., 0]
    target_logit = np.take_along_axis(x, safe_targets[..., None], axis=-1)[..., 0]
    nll = np.maximum(lse - target_logit, 0.0)
    weight = on.astype(x.dtype)
    denom = float(count) if reduction == "mean" else 1.0
    loss = np.asarray((nll * weight).sum() / denom, dtype=x.dtype)

    def cross_entropy_backward(g):
        probs = shifted / total
        np.put_along_axis(probs, safe_targets[..., None],
                          np.take_along_axis(probs, safe_targets[..., None], axis=-1) - 1.0, axis=-1)
        return (probs * (weight[..., None] * (g / denom)),)

    return _make(loss, (logits,), cross_entropy_backward)
