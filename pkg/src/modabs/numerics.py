"""Reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Tensor` wraps an ``np.ndarray`` and, when any input requires a
gradient, records the closure that propagates the output gradient back to
its inputs. :meth:`Tensor.backward` orders the recorded graph topologically
and replays it in reverse.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

KL_EPS = 1e-12
LIMIT_KINDS = ("sigmoid", "tanh", "none")

_seq = itertools.count()


class NonFiniteError(ArithmeticError):
    """Raised when a computation produces NaN or Inf."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), op: str = ""):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self._seq = next(_seq)
        self.op = op

    # -- bookkeeping -------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self) -> list["Tensor"]:
        """Backpropagate from this scalar; returns the visited nodes in replay order."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        order = _topological(self)
        for node in order:
            if node._backward is not None:
                node.grad = None
        self.grad = np.ones_like(self.data)
        replay = list(reversed(order))
        for node in replay:
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        return replay

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other)))

    def __rsub__(self, other):
        return add(_lift(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topological(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    nodes: list[Tensor] = []
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        nodes.append(node)
        stack.extend(p for p in node._parents if p.requires_grad)
    # creation order is a valid topological order: a node's inputs exist before it
    nodes.sort(key=lambda n: n._seq)
    return nodes


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    live = tuple(p for p in parents if p.requires_grad)
    out = Tensor(data, requires_grad=bool(live), op=op)
    if live:
        out._parents = live
        out._backward = backward
    return out


# -- elementwise -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), backward, "add")


def neg(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(-g)

    return _make(-a.data, (a,), backward, "neg")


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), backward, "mul")


def reciprocal(a: Tensor) -> Tensor:
    out_data = 1.0 / a.data

    def backward(g):
        a._accumulate(-g * out_data * out_data)

    return _make(out_data, (a,), backward, "reciprocal")


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        a._accumulate(g * out_data)

    return _make(out_data, (a,), backward, "exp")


def log(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(g / a.data)

    return _make(np.log(a.data), (a,), backward, "log")


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def backward(g):
        a._accumulate(g * 0.5 / out_data)

    return _make(out_data, (a,), backward, "sqrt")


def tanh(a) -> Tensor:
    a = _lift(a)
    out_data = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), backward, "tanh")


def sigmoid(a) -> Tensor:
    a = _lift(a)
    x = a.data
    # two-branch form avoids overflow in exp for large |x|
    z = np.exp(-np.abs(x))
    out_data = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))

    def backward(g):
        a._accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward, "sigmoid")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximated GELU (smooth everywhere, unlike ReLU)."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out_data = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        a._accumulate(g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner))

    return _make(out_data, (a,), backward, "gelu")


def maximum(a: Tensor, floor: float) -> Tensor:
    """Elementwise ``max(a, floor)``; the gradient is blocked where clamped."""
    keep = a.data > floor
    out_data = np.where(keep, a.data, floor)

    def backward(g):
        a._accumulate(g * keep)

    return _make(out_data, (a,), backward, "maximum")


def masked_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    mask = np.broadcast_to(mask, a.shape)
    out_data = np.where(mask, value, a.data)

    def backward(g):
        a._accumulate(np.where(mask, 0.0, g))

    return _make(out_data, (a,), backward, "masked_fill")


# -- reductions and shape --------------------------------------------------


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _make(out_data, (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[i] for i in axes]))
    return sum_(a, axis, keepdims) * (1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape

    def backward(g):
        a._accumulate(g.reshape(old))

    return _make(a.data.reshape(shape), (a,), backward, "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))

    def backward(g):
        a._accumulate(g.transpose(inverse))

    return _make(a.data.transpose(axes), (a,), backward, "transpose")


def take(a: Tensor, index) -> Tensor:
    """Basic or advanced indexing; the backward scatters with ``np.add.at``."""
    out_data = a.data[index]
    parts = index if isinstance(index, tuple) else (index,)
    fancy = any(isinstance(i, (np.ndarray, list)) for i in parts)

    def backward(g):
        full = np.zeros_like(a.data)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] = g
        a._accumulate(full)

    return _make(out_data, (a,), backward, "take")


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    datas = [t.data for t in tensors]
    out_data = np.concatenate(datas, axis=axis)
    splits = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _make(out_data, tuple(tensors), backward, "concat")


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.shape))

    return _make(out_data, (a, b), backward, "matmul")


# -- composite ops with fused backward -------------------------------------


def _check_axis(x: np.ndarray, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"axis {axis} out of range for shape {x.shape}")
    return axis % x.ndim


def softmax(logits, axis: int = -1) -> Tensor:
    logits = _lift(logits)
    axis = _check_axis(logits.data, axis)
    shifted = logits.data - logits.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        logits._accumulate(out_data * (g - dot))

    return _make(out_data, (logits,), backward, "softmax")


def log_softmax(logits, axis: int = -1) -> Tensor:
    logits = _lift(logits)
    axis = _check_axis(logits.data, axis)
    shifted = logits.data - logits.data.max(axis=axis, keepdims=True)
    out_data = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        probs = np.exp(out_data)
        logits._accumulate(g - probs * g.sum(axis=axis, keepdims=True))

    return _make(out_data, (logits,), backward, "log_softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out_data = xhat * gain.data + bias.data
    d = x.shape[-1]

    def backward(g):
        if gain.requires_grad:
            gain._accumulate(_unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad:
            bias._accumulate(_unbroadcast(g, bias.shape))
        if x.requires_grad:
            gx = g * gain.data
            x._accumulate(
                inv
                / d
                * (d * gx - gx.sum(-1, keepdims=True) - xhat * (gx * xhat).sum(-1, keepdims=True))
            )

    return _make(out_data, (x, gain, bias), backward, "layer_norm")


def limit_function(x, kind: str) -> Tensor:
    """Bounded monotone squashing applied to a divergence value."""
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "none":
        return _lift(x)
    raise ValueError(f"unknown limit kind {kind!r}; expected one of {LIMIT_KINDS}")


def cross_entropy(logits, target_index: int, ignore: bool = False) -> Tensor:
    """``-log softmax(logits)[target_index]`` for a single vocabulary vector."""
    logits = _lift(logits)
    if logits.ndim != 1:
        raise ValueError("cross_entropy expects a 1-D logit vector")
    vocab = logits.shape[0]
    if not 0 <= target_index < vocab:
        raise ValueError(f"target index {target_index} outside [0, {vocab})")
    if ignore:
        return Tensor(0.0)
    return -log_softmax(logits)[target_index]


def kl_divergence(p, q) -> Tensor:
    """``sum p_i ln(p_i / q_i)`` with ``0 ln 0 = 0``.

    Both distributions are floored at ``KL_EPS`` inside the logarithm so that
    ``kl(p, p)`` is exactly zero and a vanishing ``q_i`` cannot produce Inf.
    """
    p, q = _lift(p), _lift(q)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    log_ratio = log(maximum(p, KL_EPS)) - log(maximum(q, KL_EPS))
    return sum_(p * log_ratio)


# -- gradient checking -----------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float] = field(default_factory=dict)
    coords_checked: dict[str, int] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def passed(self, tol: float) -> bool:
        return self.worst <= tol


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
    tol: float | None = None,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f()`` with central differences.

    ``f`` closes over ``params`` and is re-evaluated after each in-place
    perturbation. ``max_coords`` limits the number of coordinates checked per
    parameter (sampled without replacement); ``None`` checks every one.
    If ``tol`` is given a failing report raises ``AssertionError``.
    """
    if not 0 < h <= 1e-2:
        raise ValueError("h must lie in (0, 1e-2]")
    for p in params.values():
        p.grad = None
    loss = f()
    _require_finite(loss.data)
    loss.backward()
    rng = np.random.default_rng(seed)
    report = GradCheckReport()
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst = 0.0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            up = _require_finite(f().data)
            flat[i] = orig - h
            down = _require_finite(f().data)
            flat[i] = orig
            numeric = float(up - down) / (2 * h)
            a = float(analytic.reshape(-1)[i])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
        report.max_rel_error[name] = worst
        report.coords_checked[name] = int(len(coords))
    if tol is not None and not report.passed(tol):
        bad = {k: v for k, v in report.max_rel_error.items() if v > tol}
        raise AssertionError(f"gradient check failed: {bad}")
    return report


def _require_finite(x: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("function value is not finite")
    return x


def check_finite(x: Tensor, where: str) -> Tensor:
    if not np.all(np.isfinite(x.data)):
        raise NonFiniteError(f"non-finite activation in {where}")
    return x


def parameters_checksum(params: Iterable[np.ndarray]) -> str:
    import hashlib

    h = hashlib.sha256()
    for arr in params:
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()
