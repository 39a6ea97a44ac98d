"""Dense reverse-mode differentiation over numpy arrays.

Only a fixed set of primitives records gradients: matmul, add, mul,
reshape, transpose, softmax, layernorm, gelu, embedding, gather, mse,
cross_entropy and stop_gradient.  Everything else in the package is built
by composing them.
"""

from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Sequence

import numpy as np

from imgcot.errors import ContractError, NumericError

class _ModeState(threading.local):
    """Per-thread modes, so worker threads entering ``no_grad`` cannot leak it into other threads."""

    def __init__(self):
        self.grad = True
        self.dtype = np.float64
        # stop-gradient replay for finite differences: None, ("record", list) or ("replay", list, cursor)
        self.frozen = None

    def __getitem__(self, key):
        return getattr(self, key)

    def __setitem__(self, key, value):
        setattr(self, key, value)


_state = _ModeState()


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ContractError(f"unsupported dtype {dtype}")
    _state["dtype"] = dtype.type


def get_default_dtype():
    return _state["dtype"]


@contextlib.contextmanager
def default_dtype(dtype):
    prev = _state["dtype"]
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = prev


@contextlib.contextmanager
def no_grad():
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


def grad_enabled() -> bool:
    return _state["grad"]


@contextlib.contextmanager
def recording_frozen(store: list):
    """Record every stop-gradient value (and other non-differentiable picks)."""
    prev = _state["frozen"]
    _state["frozen"] = ["record", store]
    try:
        yield store
    finally:
        _state["frozen"] = prev


@contextlib.contextmanager
def replaying_frozen(store: list):
    """Re-use recorded stop-gradient values so sg(.) acts as a true constant."""
    prev = _state["frozen"]
    cursor = [0]
    _state["frozen"] = ["replay", store, cursor]
    try:
        yield
        if cursor[0] != len(store):
            raise ContractError("frozen-value replay consumed fewer values than were recorded")
    finally:
        _state["frozen"] = prev


def frozen_value(compute: Callable[[], np.ndarray]) -> np.ndarray:
    """Evaluate a non-differentiable quantity, honouring record/replay mode."""
    mode = _state["frozen"]
    if mode is None:
        return compute()
    if mode[0] == "record":
        value = compute()
        mode[1].append(np.array(value, copy=True))
        return value
    store, cursor = mode[1], mode[2]
    if cursor[0] >= len(store):
        raise ContractError("frozen-value replay ran past the recorded values")
    value = store[cursor[0]]
    cursor[0] += 1
    return value


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind in "fiub":
            if arr.dtype.kind != "f":
                arr = arr.astype(_state["dtype"])
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple = ()
        self._backward = None
        self.op = "leaf"
        self.name = name

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

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # composed operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other, self), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other, self), mul(self, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def backward(self):
        backward(self)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None and like.data.dtype.kind == "f" else _state["dtype"]
    return Tensor(np.asarray(x, dtype=dtype))


def _check_finite(arr: np.ndarray, op: str, what: str = "output") -> None:
    if arr.dtype.kind == "f" and not np.isfinite(arr).all():
        raise NumericError(f"non-finite {what} in primitive '{op}'", primitive=op)


def _make(data: np.ndarray, op: str, parents: Sequence[Tensor], backward_fn) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    out.op = op
    if _state["grad"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, "add", (a, b), bw)


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    out = a.data * b.data

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, "mul", (a, b), bw)


def matmul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ContractError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(out, "matmul", (a, b), bw)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    out = a.data.reshape(shape)
    return _make(out, "reshape", (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.transpose(a.data, axes)
    return _make(out, "transpose", (a,), lambda g: (np.transpose(g, inverse),))


def _softmax_np(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    y = _softmax_np(a.data, axis)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, "softmax", (a,), bw)


def layernorm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis (no affine part; compose mul/add for that)."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd

    def bw(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (rstd * (g - gm - xhat * gx),)

    return _make(xhat, "layernorm", (a,), bw)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh approximation."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * (x * x * x))
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _make(out, "gelu", (a,), bw)


def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise ContractError("embedding ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(f"embedding id out of range [0, {table.shape[0]})")
    out = table.data[ids]

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, *table.shape[1:]))
        return (gt,)

    return _make(out, "embedding", (table,), bw)


def gather(a: Tensor, index, axis: int = 0) -> Tensor:
    """Select positions ``index`` along ``axis`` (numpy ``take`` semantics)."""
    index = np.asarray(index)
    axis = axis % a.ndim
    out = np.take(a.data, index, axis=axis)

    def bw(g):
        ga = np.zeros_like(a.data)
        moved = np.moveaxis(ga, axis, 0)
        gm = np.moveaxis(g, list(range(axis, axis + index.ndim)), list(range(index.ndim)))
        np.add.at(moved, index.reshape(-1), gm.reshape(-1, *moved.shape[1:]))
        return (ga,)

    return _make(out, "gather", (a,), bw)


def mse(pred: Tensor, target, weight=None) -> Tensor:
    """Squared error averaged over the last axis, then reduced over rows.

    Without ``weight`` the row errors are averaged; with ``weight`` (shape of
    the leading axes) the result is the weighted *sum* of row errors.
    """
    pred = _as_tensor(pred)
    target = _as_tensor(target, pred)
    if pred.shape != target.shape:
        raise ContractError(f"mse shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    d = diff.shape[-1] if diff.ndim else 1
    rows = (diff * diff).mean(axis=-1) if diff.ndim else diff * diff
    if weight is None:
        coef = np.full(rows.shape, 1.0 / max(rows.size, 1), dtype=diff.dtype)
    else:
        coef = np.asarray(weight, dtype=diff.dtype)
        if coef.shape != rows.shape:
            raise ContractError(f"mse weight shape {coef.shape} != row shape {rows.shape}")
    out = np.asarray((coef * rows).sum(), dtype=diff.dtype)

    def bw(g):
        base = (2.0 / d) * diff * (g * coef)[..., None] if diff.ndim else 2.0 * diff * g * coef
        return (base if pred.requires_grad else None, -base if target.requires_grad else None)

    return _make(out, "mse", (pred, target), bw)


def cross_entropy(logits: Tensor, targets, weight=None) -> Tensor:
    """Softmax cross-entropy over the last axis (mean, or weighted sum of rows)."""
    targets = np.asarray(targets)
    if targets.shape != logits.shape[:-1]:
        raise ContractError(f"targets shape {targets.shape} does not match logits {logits.shape}")
    x = logits.data
    v = x.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        raise ContractError("cross_entropy target out of range")
    z = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    if weight is None:
        coef = np.full(picked.shape, 1.0 / max(picked.size, 1), dtype=x.dtype)
    else:
        coef = np.asarray(weight, dtype=x.dtype)
        if coef.shape != picked.shape:
            raise ContractError(f"cross_entropy weight shape {coef.shape} != {picked.shape}")
    out = np.asarray(-(coef * picked).sum(), dtype=x.dtype)

    def bw(g):
        p = np.exp(logp)
        np.put_along_axis(p, targets[..., None], np.take_along_axis(p, targets[..., None], axis=-1) - 1.0, axis=-1)
        return (p * (g * coef)[..., None],)

    return _make(out, "cross_entropy", (logits,), bw)


def stop_gradient(a: Tensor) -> Tensor:
    value = frozen_value(lambda: a.data)
    out = Tensor(value)
    out.op = "stop_gradient"
    return out


sg = stop_gradient

PRIMITIVES = (
    "matmul", "add", "mul", "reshape", "transpose", "softmax", "layernorm",
    "gelu", "embedding", "gather", "mse", "cross_entropy", "stop_gradient",
)


# ---------------------------------------------------------------------------
# reverse sweep
# ---------------------------------------------------------------------------


def _topo_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
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


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every requires_grad leaf.

    The recorded graph is released afterwards, so calling backward twice on
    the same loss only reaches leaves directly attached to it.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            if node.op == "leaf":
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        pgrads = node._backward(g)
        for p, pg in zip(node._parents, pgrads):
            if pg is None or not p.requires_grad:
                continue
            _check_finite(pg, node.op, "gradient")
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
        node._parents = ()
        node._backward = None
        node.requires_grad = False


def tensor(data, requires_grad=False, name=None) -> Tensor:
    return Tensor(np.asarray(data, dtype=_state["dtype"]), requires_grad=requires_grad, name=name)
