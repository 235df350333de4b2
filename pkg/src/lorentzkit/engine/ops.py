"""Type-dispatching math API.

Every function here accepts either autodiff Nodes or plain numpy arrays and
returns the matching kind. Geometry code is written once against this API:
fed Nodes it builds a differentiable graph, fed arrays it runs straight
numpy (used inside optimizers, where no graph is wanted).
"""

from __future__ import annotations

import numpy as np

from .. import runtime
from . import node as _n
from .node import Node


def is_node(x) -> bool:
    return isinstance(x, Node)


def data_of(x) -> np.ndarray:
    return x.data if isinstance(x, Node) else np.asarray(x)


def _any_node(*xs) -> bool:
    return any(isinstance(x, Node) for x in xs)


def _lift(x, ref) -> Node:
    if isinstance(x, Node):
        return x
    dtype = ref.data.dtype if isinstance(ref, Node) else np.asarray(ref).dtype
    return _n.as_node(np.asarray(x, dtype=dtype))


def exp(x):
    return _n.exp(x) if is_node(x) else np.exp(x)


def log(x):
    return _n.log(x) if is_node(x) else np.log(x)


def sqrt(x):
    return _n.sqrt(x) if is_node(x) else np.sqrt(x)


def tanh(x):
    return _n.tanh(x) if is_node(x) else np.tanh(x)


def sinh(x):
    return _n.sinh(x) if is_node(x) else np.sinh(x)


def cosh(x):
    return _n.cosh(x) if is_node(x) else np.cosh(x)


def relu(x):
    return _n.relu(x) if is_node(x) else np.maximum(x, 0)


def arccosh(x):
    if is_node(x):
        return _n.arccosh(x)
    x = np.asarray(x)
    eps = runtime.eps_acosh(x.dtype)
    return np.arccosh(np.maximum(x, np.asarray(1.0 + eps, dtype=x.dtype)))


def atanh(x):
    if is_node(x):
        return _n.atanh(x)
    x = np.asarray(x)
    eps = runtime.eps_acosh(x.dtype)
    hi = np.asarray(1.0 - eps, dtype=x.dtype)
    return np.arctanh(np.clip(x, -hi, hi))


def clamp_min(x, lo: float):
    if is_node(x):
        return _n.clamp_min(x, lo)
    x = np.asarray(x)
    return np.maximum(x, np.asarray(lo, dtype=x.dtype))


def clamp_max(x, hi: float):
    if is_node(x):
        return _n.clamp_max(x, hi)
    x = np.asarray(x)
    return np.minimum(x, np.asarray(hi, dtype=x.dtype))


def where(mask, a, b):
    if _any_node(a, b):
        a = _lift(a, b if is_node(b) else a)
        b = _lift(b, a)
        return _n.where(mask, a, b)
    return np.where(mask, a, b)


def sum_(x, axis=None, keepdims: bool = False):
    if is_node(x):
        return _n.sum_(x, axis=axis, keepdims=keepdims)
    return np.sum(x, axis=axis, keepdims=keepdims)


def mean_(x, axis=None, keepdims: bool = False):
    if is_node(x):
        return _n.mean_(x, axis=axis, keepdims=keepdims)
    return np.mean(x, axis=axis, keepdims=keepdims)


def reshape(x, shape):
    return _n.reshape(x, shape) if is_node(x) else np.reshape(x, shape)


def transpose(x, axes=None):
    return _n.transpose(x, axes) if is_node(x) else np.transpose(x, axes)


def broadcast_to(x, shape):
    return _n.broadcast_to(x, shape) if is_node(x) else np.broadcast_to(x, shape)


def concat(xs, axis: int = 0):
    xs = list(xs)
    if _any_node(*xs):
        ref = next(x for x in xs if is_node(x))
        return _n.concat([_lift(x, ref) for x in xs], axis=axis)
    return np.concatenate(xs, axis=axis)


def matmul(a, b):
    if _any_node(a, b):
        a = _lift(a, b)
        b = _lift(b, a)
        return _n.matmul(a, b)
    return a @ b


def conv2d(x, w, stride=1, padding=0, method: str = "auto"):
    if _any_node(x, w):
        x = _lift(x, w)
        w = _lift(w, x)
        return _n.conv2d(x, w, stride=stride, padding=padding, method=method)
    return _n.conv2d(_n.as_node(x), _n.as_node(w), stride=stride, padding=padding,
                     method=method).data


def inv(x):
    return _n.inv(x) if is_node(x) else np.linalg.inv(x)
