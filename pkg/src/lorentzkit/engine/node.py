"""Minimal reverse-mode autodiff over dense numpy tensors.

A Node carries a value (numpy array), an optional gradient slot, its parents
and a backward closure that accumulates (+=) into the parents' gradients.
Graphs are acyclic and built define-by-run; backward walks a fixed
topological order, so repeated passes over the same graph are bitwise
deterministic.

Tensors are plain numpy arrays (shape / contiguous buffer / dtype); float32
and float64 are supported end to end. Non-finite forward outputs raise
NumericError naming the offending op while runtime.check_finite is on.

arccosh and atanh clamp their inputs away from the singular points using the
per-dtype margins in runtime.eps_acosh; gradients are zero outside the clamp
region (subgradient convention), as are clamp_min/clamp_max.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .. import runtime
from ..errors import NumericError, UsageError
from . import kernels

# Dense tensors are plain numpy arrays; DiffNode is the graph value type.
Tensor = np.ndarray


def _check_out(data: np.ndarray, op: str) -> np.ndarray:
    if runtime.check_finite and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite output of op '{op}'")
    return data


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Node:
    """One value in the differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bw", "op")
    __array_ufunc__ = None  # keep numpy from absorbing Node operands

    def __init__(self, data, parents: Sequence["Node"] = (), bw: Callable | None = None,
                 requires_grad: bool | None = None, op: str = "leaf"):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self._parents = tuple(parents)
        self._bw = bw
        self.op = op
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self._parents)
        self.requires_grad = requires_grad

    # -- basic introspection ------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Node(op={self.op!r}, shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- operators ----------------------------------------------------------
    def _coerce(self, other) -> "Node":
        if isinstance(other, Node):
            return other
        return Node(np.asarray(other, dtype=self.data.dtype), requires_grad=False, op="const")

    def __add__(self, other):
        return add(self, self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, self._coerce(other))

    def __rsub__(self, other):
        return sub(self._coerce(other), self)

    def __mul__(self, other):
        return mul(self, self._coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, self._coerce(other))

    def __rtruediv__(self, other):
        return div(self._coerce(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return powi(self, exponent)

    def __matmul__(self, other):
        return matmul(self, self._coerce(other))

    def __getitem__(self, key):
        return getitem(self, key)

    def backward(self) -> dict["Node", np.ndarray]:
        return backward(self)


def as_node(x, dtype=None) -> Node:
    if isinstance(x, Node):
        return x
    return Node(np.asarray(x, dtype=dtype), requires_grad=False, op="const")


def leaf(data, requires_grad: bool = True) -> Node:
    return Node(np.asarray(data), requires_grad=requires_grad, op="leaf")


# -- graph walk --------------------------------------------------------------

def _topo(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
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


def clear_grads(root: Node) -> None:
    """Reset gradient slots of every node reachable from root."""
    for n in _topo(root):
        n.grad = None


def backward(root: Node) -> dict[Node, np.ndarray]:
    """Reverse-accumulate from a scalar root; returns {leaf: gradient}."""
    if root.data.size != 1:
        raise UsageError(f"backward root must be scalar, got shape {root.data.shape}")
    if not root.requires_grad:
        return {}
    order = _topo(root)
    root._accum(np.ones_like(root.data))
    grads: dict[Node, np.ndarray] = {}
    for node in reversed(order):
        if node._bw is not None and node.grad is not None:
            node._bw(node.grad)
        if node._bw is None and node.requires_grad:
            grads[node] = node.grad
    return grads


# -- primitive constructors ---------------------------------------------------

def _binary(op: str, a: Node, b: Node, fwd, da, db) -> Node:
    out_data = _check_out(fwd(a.data, b.data), op)
    out = Node(out_data, (a, b), None, op=op)
    if out.requires_grad:
        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(da(g, a.data, b.data, out_data), a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(db(g, a.data, b.data, out_data), b.data.shape))
        out._bw = bw
    return out


def add(a: Node, b: Node) -> Node:
    return _binary("add", a, b, np.add, lambda g, x, y, o: g, lambda g, x, y, o: g)


def sub(a: Node, b: Node) -> Node:
    return _binary("sub", a, b, np.subtract, lambda g, x, y, o: g, lambda g, x, y, o: -g)


def mul(a: Node, b: Node) -> Node:
    return _binary("mul", a, b, np.multiply, lambda g, x, y, o: g * y, lambda g, x, y, o: g * x)


def div(a: Node, b: Node) -> Node:
    return _binary("div", a, b, np.divide,
                   lambda g, x, y, o: g / y,
                   lambda g, x, y, o: -g * x / (y * y))


def neg(a: Node) -> Node:
    out = Node(-a.data, (a,), None, op="neg")
    if out.requires_grad:
        out._bw = lambda g: a._accum(-g)
    return out


def _unary(op: str, a: Node, fwd, dfn) -> Node:
    out_data = _check_out(fwd(a.data), op)
    out = Node(out_data, (a,), None, op=op)
    if out.requires_grad:
        out._bw = lambda g: a._accum(dfn(g, a.data, out_data))
    return out


def powi(a: Node, exponent) -> Node:
    e = float(exponent)
    return _unary("pow", a, lambda x: x ** e, lambda g, x, o: g * e * x ** (e - 1.0))


def exp(a: Node) -> Node:
    return _unary("exp", a, np.exp, lambda g, x, o: g * o)


def log(a: Node) -> Node:
    return _unary("log", a, np.log, lambda g, x, o: g / x)


def sqrt(a: Node) -> Node:
    return _unary("sqrt", a, np.sqrt, lambda g, x, o: g * 0.5 / o)


def tanh(a: Node) -> Node:
    return _unary("tanh", a, np.tanh, lambda g, x, o: g * (1.0 - o * o))


def sinh(a: Node) -> Node:
    return _unary("sinh", a, np.sinh, lambda g, x, o: g * np.cosh(x))


def cosh(a: Node) -> Node:
    return _unary("cosh", a, np.cosh, lambda g, x, o: g * np.sinh(x))


def relu(a: Node) -> Node:
    return _unary("relu", a, lambda x: np.maximum(x, 0),
                  lambda g, x, o: g * (x > 0))


def arccosh(a: Node) -> Node:
    eps = runtime.eps_acosh(a.data.dtype)
    lo = np.asarray(1.0 + eps, dtype=a.data.dtype)

    def fwd(x):
        return np.arccosh(np.maximum(x, lo))

    def dfn(g, x, o):
        xc = np.maximum(x, lo)
        return g * (x >= lo) / np.sqrt(xc * xc - 1.0)

    return _unary("arccosh", a, fwd, dfn)


def atanh(a: Node) -> Node:
    eps = runtime.eps_acosh(a.data.dtype)
    hi = np.asarray(1.0 - eps, dtype=a.data.dtype)

    def fwd(x):
        return np.arctanh(np.clip(x, -hi, hi))

    def dfn(g, x, o):
        xc = np.clip(x, -hi, hi)
        return g * (np.abs(x) <= hi) / (1.0 - xc * xc)

    return _unary("atanh", a, fwd, dfn)


def clamp_min(a: Node, lo: float) -> Node:
    lo_ = float(lo)
    return _unary("clamp_min", a, lambda x: np.maximum(x, np.asarray(lo_, x.dtype)),
                  lambda g, x, o: g * (x >= lo_))


def clamp_max(a: Node, hi: float) -> Node:
    hi_ = float(hi)
    return _unary("clamp_max", a, lambda x: np.minimum(x, np.asarray(hi_, x.dtype)),
                  lambda g, x, o: g * (x <= hi_))


def where(mask, a: Node, b: Node) -> Node:
    """Elementwise select with a constant boolean mask (not differentiated)."""
    m = np.asarray(mask, dtype=bool)
    out_data = _check_out(np.where(m, a.data, b.data), "where")
    out = Node(out_data, (a, b), None, op="where")
    if out.requires_grad:
        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(np.where(m, g, 0.0), a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(np.where(m, 0.0, g), b.data.shape))
        out._bw = bw
    return out


def matmul(a: Node, b: Node) -> Node:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise UsageError(f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise UsageError(f"matmul inner mismatch: {a.data.shape} @ {b.data.shape}")
    out_data = _check_out(a.data @ b.data, "matmul")
    out = Node(out_data, (a, b), None, op="matmul")
    if out.requires_grad:
        def bw(g):
            if a.requires_grad:
                a._accum(g @ b.data.T)
            if b.requires_grad:
                b._accum(a.data.T @ g)
        out._bw = bw
    return out


def inv(a: Node) -> Node:
    """Matrix inverse (square 2-D)."""
    if a.data.ndim != 2 or a.data.shape[0] != a.data.shape[1]:
        raise UsageError(f"inv expects a square matrix, got {a.data.shape}")
    try:
        out_data = np.linalg.inv(a.data)
    except np.linalg.LinAlgError as e:
        raise NumericError(f"inv: {e}") from e
    _check_out(out_data, "inv")
    out = Node(out_data, (a,), None, op="inv")
    if out.requires_grad:
        out._bw = lambda g: a._accum(-out_data.T @ g @ out_data.T)
    return out


def sum_(a: Node, axis=None, keepdims: bool = False) -> Node:
    out_data = _check_out(a.data.sum(axis=axis, keepdims=keepdims), "sum")
    out = Node(out_data, (a,), None, op="sum")
    if out.requires_grad:
        def bw(g):
            gg = g
            if not keepdims and axis is not None:
                axes = axis if isinstance(axis, tuple) else (axis,)
                axes = tuple(ax % a.data.ndim for ax in axes)
                for ax in sorted(axes):
                    gg = np.expand_dims(gg, ax)
            a._accum(np.broadcast_to(gg, a.data.shape).astype(a.data.dtype, copy=False))
        out._bw = bw
    return out


def mean_(a: Node, axis=None, keepdims: bool = False) -> Node:
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax % a.data.ndim] for ax in (axis if isinstance(axis, tuple) else (axis,))])
    s = sum_(a, axis=axis, keepdims=keepdims)
    return mul(s, as_node(1.0 / float(count), dtype=a.data.dtype))


def reshape(a: Node, shape) -> Node:
    out = Node(a.data.reshape(shape), (a,), None, op="reshape")
    if out.requires_grad:
        out._bw = lambda g: a._accum(g.reshape(a.data.shape))
    return out


def transpose(a: Node, axes=None) -> Node:
    out = Node(np.ascontiguousarray(a.data.transpose(axes)), (a,), None, op="transpose")
    if out.requires_grad:
        inv_axes = None if axes is None else tuple(np.argsort(axes))
        out._bw = lambda g: a._accum(np.ascontiguousarray(g.transpose(inv_axes)))
    return out


def broadcast_to(a: Node, shape) -> Node:
    out = Node(np.broadcast_to(a.data, shape), (a,), None, op="broadcast")
    if out.requires_grad:
        out._bw = lambda g: a._accum(_unbroadcast(g, a.data.shape))
    return out


def concat(nodes: Iterable[Node], axis: int = 0) -> Node:
    nodes = list(nodes)
    try:
        out_data = np.concatenate([n.data for n in nodes], axis=axis)
    except ValueError as e:
        raise UsageError(f"concat: {e}") from e
    _check_out(out_data, "concat")
    out = Node(out_data, tuple(nodes), None, op="concat")
    if out.requires_grad:
        sizes = [n.data.shape[axis % n.data.ndim] for n in nodes]
        offsets = np.cumsum([0] + sizes)

        def bw(g):
            for n, lo, hi in zip(nodes, offsets[:-1], offsets[1:]):
                if n.requires_grad:
                    key = [slice(None)] * g.ndim
                    key[axis % g.ndim] = slice(lo, hi)
                    n._accum(g[tuple(key)])
        out._bw = bw
    return out


def getitem(a: Node, key) -> Node:
    # keep the sliced view as-is (ascontiguousarray would promote 0-d to 1-d)
    out = Node(a.data[key], (a,), None, op="slice")
    if out.requires_grad:
        def bw(g):
            buf = np.zeros_like(a.data)
            np.add.at(buf, key, g)  # fancy keys may repeat indices
            a._accum(buf)
        out._bw = bw
    return out


# -- convolution ---------------------------------------------------------------

def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv2d(x: Node, w: Node, stride=1, padding=0, method: str = "auto") -> Node:
    """2-D convolution (cross-correlation), x:(B,C,H,W), w:(CO,C,kh,kw).

    method 'im2col' (default) unfolds windows and multiplies once;
    'direct' runs the loop kernel. Both forward paths agree to roundoff;
    backward always goes through the unfold/fold route.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise UsageError(f"conv2d expects 4-D x and w, got {x.data.shape}, {w.data.shape}")
    if x.data.shape[1] != w.data.shape[1]:
        raise UsageError(f"conv2d channel mismatch: x has {x.data.shape[1]}, w has {w.data.shape[1]}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    B, C, H, W = x.data.shape
    CO, _, kh, kw = w.data.shape
    OH = (H + 2 * ph - kh) // sh + 1
    OW = (W + 2 * pw - kw) // sw + 1
    if OH <= 0 or OW <= 0:
        raise UsageError(f"conv2d output would be empty for input {x.data.shape}, kernel {w.data.shape}")
    n = kh * kw * C

    cols = None
    if method in ("auto", "im2col"):
        cols = kernels.unfold(np.ascontiguousarray(x.data), kh, kw, sh, sw, ph, pw)  # (B,OH,OW,n) point-major
        wmat = w.data.transpose(2, 3, 1, 0).reshape(n, CO)
        out_data = (cols.reshape(-1, n) @ wmat).reshape(B, OH, OW, CO).transpose(0, 3, 1, 2)
        out_data = np.ascontiguousarray(out_data)
    elif method == "direct":
        out_data = kernels.conv2d_direct(np.ascontiguousarray(x.data),
                                         np.ascontiguousarray(w.data), sh, sw, ph, pw)
    else:
        raise UsageError(f"conv2d: unknown method {method!r}")
    _check_out(out_data, "conv2d")

    out = Node(out_data, (x, w), None, op="conv2d")
    if out.requires_grad:
        def bw(g):
            nonlocal cols
            gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, CO)
            if x.requires_grad:
                wmat_ = w.data.transpose(2, 3, 1, 0).reshape(n, CO)
                gcols = (gmat @ wmat_.T).reshape(B, OH, OW, n)
                x._accum(kernels.fold_add(np.ascontiguousarray(gcols), C, H, W,
                                          kh, kw, sh, sw, ph, pw))
            if w.requires_grad:
                if cols is None:
                    cols = kernels.unfold(np.ascontiguousarray(x.data), kh, kw, sh, sw, ph, pw)
                gw = cols.reshape(-1, n).T @ gmat  # (n, CO)
                w._accum(gw.reshape(kh, kw, C, CO).transpose(3, 2, 0, 1))
        out._bw = bw
    return out


DiffNode = Node
