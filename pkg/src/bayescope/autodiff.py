"""Reverse-mode automatic differentiation on a dynamic tape.

Every op builds a new :class:`Node` holding its float64 value and a closure
that maps the upstream gradient to gradients for its parents. The graph is
rebuilt on each forward pass, so sampled weights need no special handling.

Broadcasting is restricted to two cases: a scalar against any tensor, and a
lower-rank operand whose shape equals the trailing dimensions of the other.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError, NumericDomainError

_LOG_2PI = float(np.log(2.0 * np.pi))


class Node:
    """A value in the computation graph.

    ``requires_grad=True`` marks a leaf parameter; its gradient accumulates
    across :func:`backward` calls until :meth:`zero_grad`.
    """

    __slots__ = ("value", "_grad", "parents", "backward_fn", "requires_grad", "op")

    def __init__(self, value, requires_grad: bool = False, *, parents=(), backward_fn=None, op: str = "leaf"):
        self.value = np.array(value, dtype=np.float64)
        self._grad: Optional[np.ndarray] = None
        self.parents: tuple = tuple(parents)
        self.backward_fn: Optional[Callable] = backward_fn
        self.requires_grad = requires_grad
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, g):
        self._grad = None if g is None else np.asarray(g, dtype=np.float64)

    def zero_grad(self):
        self._grad = None

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else float(self.value)

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.value.shape})"

    # operator sugar; every op is also available as a module-level function
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def constant(x) -> Node:
    return Node(x, requires_grad=False)


def parameter(x) -> Node:
    return Node(x, requires_grad=True)


_state = threading.local()


@contextmanager
def no_grad():
    """Disable tape recording in the current thread."""
    prev = getattr(_state, "disabled", False)
    _state.disabled = True
    try:
        yield
    finally:
        _state.disabled = prev


def _make(value, parents: Sequence[Node], backward_fn, op: str) -> Node:
    value = np.asarray(value, dtype=np.float64)
    if not np.isfinite(value).all():
        raise NumericDomainError(f"non-finite value produced by {op}")
    node = Node.__new__(Node)
    node.value = value
    node._grad = None
    node.op = op
    if not getattr(_state, "disabled", False) and any(p.requires_grad for p in parents):
        node.parents = tuple(parents)
        node.backward_fn = backward_fn
        node.requires_grad = True
    else:
        node.parents = ()
        node.backward_fn = None
        node.requires_grad = False
    return node


def _is_scalar(shape) -> bool:
    return len(shape) == 0 or (len(shape) == 1 and shape[0] == 1)


def _check_broadcast(sa, sb, op):
    if sa == sb or _is_scalar(sa) or _is_scalar(sb):
        return
    lo, hi = (sa, sb) if len(sa) < len(sb) else (sb, sa)
    if len(lo) < len(hi) and hi[len(hi) - len(lo):] == lo:
        return
    raise DimensionError(f"{op}: shapes {sa} and {sb} are not broadcast-compatible")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if _is_scalar(shape):
        return np.sum(g).reshape(shape)
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))).reshape(shape)


# ---------------------------------------------------------------- binary ops

def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_broadcast(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return _make(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_broadcast(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_broadcast(a.shape, b.shape, "mul")
    av, bv = a.value, b.value
    return _make(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)), "mul")


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_broadcast(a.shape, b.shape, "div")
    av, bv = a.value, b.value
    if np.any(bv == 0):
        raise NumericDomainError("div: division by zero")
    out = av / bv
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)), "div")


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value
    return _make(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


# ----------------------------------------------------------------- unary ops

def neg(x) -> Node:
    x = as_node(x)
    return _make(-x.value, (x,), lambda g: (-g,), "neg")


def exp(x) -> Node:
    x = as_node(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.value)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x) -> Node:
    x = as_node(x)
    xv = x.value
    if np.any(xv <= 0):
        raise NumericDomainError("log: argument must be positive")
    return _make(np.log(xv), (x,), lambda g: (g / xv,), "log")


def tanh(x) -> Node:
    x = as_node(x)
    out = np.tanh(x.value)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(x) -> Node:
    x = as_node(x)
    mask = x.value > 0
    return _make(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid_array(v):
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def softplus_array(v):
    return np.logaddexp(0.0, v)


def softplus(x) -> Node:
    x = as_node(x)
    xv = x.value
    return _make(softplus_array(xv), (x,), lambda g: (g * sigmoid_array(xv),), "softplus")


def square(x) -> Node:
    x = as_node(x)
    xv = x.value
    return _make(xv * xv, (x,), lambda g: (2.0 * g * xv,), "square")


def clamp(x, lo: float, hi: float) -> Node:
    """Clip to ``[lo, hi]``; gradient is zero where clipping is active."""
    x = as_node(x)
    xv = x.value
    inside = (xv >= lo) & (xv <= hi)
    return _make(np.clip(xv, lo, hi), (x,), lambda g: (g * inside,), "clamp")


def gaussian_log_pdf(x, mu, log_var) -> Node:
    """Fused elementwise log N(x | mu, exp(log_var)) with an analytic backward."""
    x, mu, log_var = as_node(x), as_node(mu), as_node(log_var)
    for other in (mu, log_var):
        _check_broadcast(x.shape, other.shape, "gaussian_log_pdf")
    _check_broadcast(mu.shape, log_var.shape, "gaussian_log_pdf")
    xv, mv, lv = x.value, mu.value, log_var.value
    prec = np.exp(-lv)
    resid = xv - mv
    z2 = resid * resid * prec
    out = -0.5 * (_LOG_2PI + lv + z2)

    def bw(g):
        d_x = -g * resid * prec
        return (_unbroadcast(d_x, xv.shape) if x.requires_grad else None,
                _unbroadcast(-d_x, mv.shape) if mu.requires_grad else None,
                _unbroadcast(0.5 * g * (z2 - 1.0), lv.shape) if log_var.requires_grad else None)

    return _make(out, (x, mu, log_var), bw, "gaussian_log_pdf")


# ------------------------------------------------------------ shape / reduce

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def reduce_sum(x, axis=None) -> Node:
    x = as_node(x)
    shape = x.shape
    axes = _norm_axis(axis, x.value.ndim)
    out = x.value.sum(axis=axes)

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, axes), shape).copy(),)

    return _make(out, (x,), bw, "reduce_sum")


def reduce_mean(x, axis=None) -> Node:
    x = as_node(x)
    shape = x.shape
    axes = _norm_axis(axis, x.value.ndim)
    count = int(np.prod([shape[a] for a in axes])) if axes else 1
    out = x.value.mean(axis=axes) if axes else x.value.copy()

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, axes), shape) / count,)

    return _make(out, (x,), bw, "reduce_mean")


def reshape(x, shape) -> Node:
    x = as_node(x)
    old = x.shape
    return _make(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def getitem(x, idx) -> Node:
    x = as_node(x)
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _make(x.value[idx], (x,), bw, "getitem")


# ------------------------------------------------------------- conv / pool

def _as_batch(v):
    if v.ndim == 3:
        return v[None], True
    if v.ndim == 4:
        return v, False
    raise DimensionError(f"conv2d: expected [h,w,c] or [n,h,w,c], got {v.shape}")


def conv2d(x, kernels_: Node, stride: int = 1) -> Node:
    """Valid (unpadded) 2-D convolution, channels-last.

    ``x`` is ``[h, w, c_in]`` or batched ``[n, h, w, c_in]``; the kernel is
    ``[kh, kw, c_in, c_out]``.
    """
    x, k = as_node(x), as_node(kernels_)
    xv, single = _as_batch(x.value)
    kv = k.value
    if kv.ndim != 4:
        raise DimensionError(f"conv2d: kernel must be 4-D, got {kv.shape}")
    if stride < 1:
        raise DimensionError("conv2d: stride must be >= 1")
    _, h, w, c_in = xv.shape
    kh, kw, kc, _ = kv.shape
    if kh > h or kw > w:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than input {h}x{w}")
    if kc != c_in:
        raise DimensionError(f"conv2d: kernel expects {kc} input channels, got {c_in}")
    out = kernels.conv2d_forward(xv, kv, stride)

    def bw(g):
        gb = g[None] if single else g
        dx = kernels.conv2d_backward_input(gb, kv, h, w, stride) if x.requires_grad else None
        dk = kernels.conv2d_backward_kernel(xv, gb, kh, kw, stride) if k.requires_grad else None
        if dx is not None and single:
            dx = dx[0]
        return dx, dk

    return _make(out[0] if single else out, (x, k), bw, "conv2d")


def mean_pool2d(x, size: int = 2) -> Node:
    """Non-overlapping ``size x size`` average pooling (trailing rows/cols dropped)."""
    x = as_node(x)
    xv, single = _as_batch(x.value)
    _, h, w, _ = xv.shape
    if size > h or size > w:
        raise DimensionError(f"mean_pool2d: window {size} larger than input {h}x{w}")
    out = kernels.mean_pool_forward(xv, size)

    def bw(g):
        dx = kernels.mean_pool_backward(g[None] if single else g, h, w, size)
        return (dx[0] if single else dx,)

    return _make(out[0] if single else out, (x,), bw, "mean_pool2d")


# ------------------------------------------------------------------ backward

def _topo_order(root: Node):
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
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    Intermediate nodes get their gradient overwritten (not accumulated), so
    calling ``backward`` twice on the same graph doubles leaf gradients.
    """
    if loss.value.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    pending = {id(loss): np.ones_like(loss.value)}
    for node in reversed(_topo_order(loss)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node._grad = g.copy() if node._grad is None else node._grad + g
            continue
        node._grad = g
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pending[key] + pg if key in pending else pg


def numeric_grad(f: Callable[[], float], param: Node, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f()`` w.r.t. ``param``."""
    grad = np.zeros_like(param.value)
    flat = param.value.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad
