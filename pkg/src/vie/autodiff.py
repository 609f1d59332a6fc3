"""Reverse-mode automatic differentiation over small dense float64 arrays.

A :class:`Tape` records every primitive applied to tensors that live on it.
Nodes are appended in creation order, so the record is already topologically
sorted and :func:`backward` is a single reverse sweep.

Tensors without a tape are plain constants: operations on them run eagerly
and record nothing, which is how evaluation code and frozen parameters are
handled.

Example
-------
>>> tape = Tape()
>>> x = tape.leaf(2.0)
>>> y = tape.leaf(3.0)
>>> out = x * y
>>> grads = backward(tape, out)
>>> float(grads[x.node_id])
3.0
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractError, DomainError, NumericError

__all__ = [
    "Tape", "Tensor", "apply_primitive", "register_primitive", "backward", "grad", "finite_diff_check",
    "add", "sub", "mul", "div", "matmul", "dense", "exp", "log", "log1p", "neg", "relu",
    "softplus", "sigmoid", "log1mexp", "square", "reduce_sum", "reduce_mean",
    "concat", "slice_", "broadcast", "clamp", "where", "reshape", "transpose",
    "as_tensor", "value_of",
]


class Tape:
    """Append-only record of primitive applications."""

    def __init__(self):
        self.kinds: list[str] = []
        self.parents: list[tuple] = []
        self.vjps: list[Callable | None] = []
        self.leaf_shapes: dict[int, tuple] = {}

    def __len__(self):
        return len(self.kinds)

    def leaf(self, value) -> "Tensor":
        """Register ``value`` as a differentiable input."""
        arr = np.array(value, dtype=np.float64)
        nid = self._record("leaf", (), None)
        self.leaf_shapes[nid] = arr.shape
        return Tensor(arr, self, nid)

    def leaves(self) -> list[int]:
        return [i for i, k in enumerate(self.kinds) if k == "leaf"]

    def _record(self, kind, parents, vjp) -> int:
        self.kinds.append(kind)
        self.parents.append(parents)
        self.vjps.append(vjp)
        return len(self.kinds) - 1


class Tensor:
    """A float64 array, optionally bound to a node on a tape."""

    __slots__ = ("value", "tape", "node_id")
    __array_priority__ = 100.0

    def __init__(self, value, tape: Tape | None = None, node_id: int | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def __repr__(self):
        tag = f", node={self.node_id}" if self.tape is not None else ""
        return f"Tensor({self.value!r}{tag})"

    def __float__(self):
        return float(self.value)

    def __len__(self):
        return len(self.value)

    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __matmul__(self, o): return matmul(self, o)
    def __rmatmul__(self, o): return matmul(o, self)
    def __neg__(self): return neg(self)
    def __getitem__(self, index): return slice_(self, index)

    def sum(self, axis=None, keepdims=False): return reduce_sum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return reduce_mean(self, axis, keepdims)
    def exp(self): return exp(self)
    def log(self): return log(self)
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self): return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def value_of(x) -> np.ndarray:
    """Underlying array of a tensor, or the array itself."""
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_finite(kind, out):
    # sum() is a cheap screen; a non-finite sum can also be plain overflow
    if not np.isfinite(np.sum(out)) and not np.isfinite(out).all():
        raise NumericError(f"{kind} produced non-finite values")


# -- primitive table: each entry maps input arrays to (output, vjp) ----------

def _p_add(a, b):
    return a + b, lambda g, n: (_unbroadcast(g, a.shape) if n[0] else None,
                                _unbroadcast(g, b.shape) if n[1] else None)


def _p_sub(a, b):
    return a - b, lambda g, n: (_unbroadcast(g, a.shape) if n[0] else None,
                                _unbroadcast(-g, b.shape) if n[1] else None)


def _p_mul(a, b):
    return a * b, lambda g, n: (_unbroadcast(g * b, a.shape) if n[0] else None,
                                _unbroadcast(g * a, b.shape) if n[1] else None)


def _p_div(a, b):
    if np.any(b == 0):
        raise DomainError("division by zero")
    out = a / b
    return out, lambda g, n: (_unbroadcast(g / b, a.shape) if n[0] else None,
                              _unbroadcast(-g * out / b, b.shape) if n[1] else None)


def _p_matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul shapes not conformable: {a.shape} @ {b.shape}")
    return a @ b, lambda g, n: (g @ b.T if n[0] else None, a.T @ g if n[1] else None)


def _p_exp(a):
    out = np.exp(a)
    return out, lambda g, n: (g * out,)


def _p_log(a):
    if np.any(a <= 0):
        raise DomainError("log of non-positive value")
    return np.log(a), lambda g, n: (g / a,)


def _p_log1p(a):
    if np.any(a <= -1):
        raise DomainError("log1p argument <= -1")
    return np.log1p(a), lambda g, n: (g / (1.0 + a),)


def _p_neg(a):
    return -a, lambda g, n: (-g,)


def _p_relu(a):
    out = np.maximum(a, 0.0)
    return out, lambda g, n: (np.where(out > 0, g, 0.0),)


def _p_dense(x, W, b, act=None):
    # fused act(x @ W + b); ``act`` is None or "relu"
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ContractError(f"dense shapes not conformable: {x.shape} @ {W.shape} + {b.shape}")
    out = x @ W
    out += b
    if act == "relu":
        np.maximum(out, 0.0, out=out)

    def vjp(g, n):
        if act == "relu":
            g = np.where(out > 0, g, 0.0)
        return (g @ W.T if n[0] else None,
                x.T @ g if n[1] else None,
                g.sum(axis=0) if n[2] else None)
    return out, vjp


def _p_softplus(a):
    return np.logaddexp(0.0, a), lambda g, n: (g * expit(a),)


def _p_sigmoid(a):
    s = expit(a)
    return s, lambda g, n: (g * s * (1.0 - s),)


def _p_log1mexp(a):
    # log(1 - exp(-a)) for a > 0
    if np.any(a <= 0):
        raise DomainError("log1mexp requires a positive argument")
    out = np.log(-np.expm1(-a))

    def vjp(g, n):
        with np.errstate(over="ignore"):
            return (g / np.expm1(a),)
    return out, vjp


def _p_square(a):
    return a * a, lambda g, n: (2.0 * g * a,)


def _p_sum(a, axis=None, keepdims=False):
    out = np.sum(a, axis=axis, keepdims=keepdims)

    def vjp(g, n):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)
    return out, vjp


def _p_mean(a, axis=None, keepdims=False):
    count = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    out = np.sum(a, axis=axis, keepdims=keepdims) / count

    def vjp(g, n):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape),)
    return out, vjp


def _p_concat(*arrays, axis=0):
    try:
        out = np.concatenate(arrays, axis=axis)
    except ValueError as exc:
        raise ContractError(f"concat: {exc}") from None
    bounds = np.cumsum([x.shape[axis] for x in arrays])[:-1]

    def vjp(g, n):
        parts = np.split(g, bounds, axis=axis)
        return tuple(p if need else None for p, need in zip(parts, n))
    return out, vjp


def _is_basic_index(index):
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None
               for i in items)


def _p_slice(a, index=None):
    try:
        out = a[index]
    except IndexError as exc:
        raise ContractError(f"slice: {exc}") from None
    basic = _is_basic_index(index)

    def vjp(g, n):
        full = np.zeros(a.shape)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)
    return np.array(out, dtype=np.float64), vjp


def _p_broadcast(a, shape=None):
    try:
        out = np.broadcast_to(a, shape).copy()
    except ValueError as exc:
        raise ContractError(f"broadcast: {exc}") from None
    return out, lambda g, n: (_unbroadcast(g, a.shape),)


def _p_clamp(a, lo=-np.inf, hi=np.inf):
    inside = (a >= lo) & (a <= hi)
    return np.clip(a, lo, hi), lambda g, n: (g * inside,)


def _p_where(a, b, cond=None):
    out = np.where(cond, a, b)
    return out, lambda g, n: (_unbroadcast(np.where(cond, g, 0.0), a.shape) if n[0] else None,
                              _unbroadcast(np.where(cond, 0.0, g), b.shape) if n[1] else None)


def _p_reshape(a, shape=None):
    try:
        out = a.reshape(shape)
    except ValueError as exc:
        raise ContractError(f"reshape: {exc}") from None
    return out, lambda g, n: (g.reshape(a.shape),)


def _p_transpose(a):
    return a.T, lambda g, n: (g.T,)


_PRIMITIVES = {
    "add": _p_add, "sub": _p_sub, "mul": _p_mul, "div": _p_div,
    "matmul": _p_matmul, "dense": _p_dense, "exp": _p_exp, "log": _p_log, "log1p": _p_log1p,
    "neg": _p_neg, "relu": _p_relu, "softplus": _p_softplus,
    "sigmoid": _p_sigmoid, "log1mexp": _p_log1mexp, "square": _p_square,
    "sum": _p_sum, "mean": _p_mean, "concat": _p_concat, "slice": _p_slice,
    "broadcast": _p_broadcast, "clamp": _p_clamp, "where": _p_where,
    "reshape": _p_reshape, "transpose": _p_transpose,
}
_BINARY = {"add", "sub", "mul", "div"}
# ops that can turn finite inputs into Inf/NaN
_CHECKED = {"mul", "div", "matmul", "dense", "exp", "log", "log1p", "log1mexp",
            "square", "sum", "mean", "softplus"}


def register_primitive(kind: str, fn: Callable, checked: bool = True):
    """Add a primitive. ``fn(*arrays, **attrs)`` returns ``(output, vjp)`` where
    ``vjp(upstream, needs)`` returns one gradient (or None) per input."""
    if kind in _PRIMITIVES:
        raise ContractError(f"primitive {kind!r} already registered")
    _PRIMITIVES[kind] = fn
    if checked:
        _CHECKED.add(kind)


def apply_primitive(kind: str, inputs: Sequence, **attrs) -> Tensor:
    """Evaluate primitive ``kind`` and record it on the inputs' tape."""
    try:
        fn = _PRIMITIVES[kind]
    except KeyError:
        raise ContractError(f"unknown primitive {kind!r}") from None
    tensors = [as_tensor(x) for x in inputs]
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ContractError("inputs live on different tapes")
            tape = t.tape
    values = [t.value for t in tensors]
    if kind in _BINARY:
        try:
            np.broadcast_shapes(values[0].shape, values[1].shape)
        except ValueError:
            raise ContractError(
                f"{kind}: shapes {values[0].shape} and {values[1].shape} do not broadcast"
            ) from None
    with np.errstate(over="ignore", invalid="ignore"):
        out, vjp = fn(*values, **attrs)
    if kind in _CHECKED:
        _check_finite(kind, out)
    if tape is None:
        return Tensor(out)
    parents = tuple(t.node_id if t.tape is tape else None for t in tensors)
    return Tensor(out, tape, tape._record(kind, parents, vjp))


def backward(tape: Tape, output: Tensor) -> dict[int, np.ndarray]:
    """Gradients of scalar ``output`` with respect to every leaf on ``tape``.

    Leaves that do not influence ``output`` get zero arrays.
    """
    if output.tape is not tape:
        raise ContractError("output is not recorded on this tape")
    if output.value.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    grads: list = [None] * len(tape)
    grads[output.node_id] = np.ones_like(output.value)
    for i in range(output.node_id, -1, -1):
        g = grads[i]
        vjp = tape.vjps[i]
        if g is None or vjp is None:
            continue
        parents = tape.parents[i]
        needs = tuple(p is not None for p in parents)
        for p, gp in zip(parents, vjp(g, needs)):
            if p is None or gp is None:
                continue
            grads[p] = gp if grads[p] is None else grads[p] + gp
        grads[i] = None
    result = {}
    for i in tape.leaves():
        g = grads[i] if i <= output.node_id else None
        result[i] = np.zeros(tape.leaf_shapes[i]) if g is None else np.array(g, dtype=np.float64)
    return result


def grad(output: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of ``output`` with respect to leaf tensors ``wrt``."""
    g = backward(output.tape, output)
    out = []
    for t in wrt:
        out.append(g[t.node_id])
    return out


def finite_diff_check(f: Callable, x, step: float = 1e-6) -> float:
    """Max relative error between tape gradient and central differences.

    ``f`` maps a tensor to a scalar tensor. The error per coordinate is
    ``|analytic - numeric| / max(1, |numeric|)``.
    """
    x = np.array(x, dtype=np.float64)
    tape = Tape()
    xt = tape.leaf(x)
    out = as_tensor(f(xt))
    if out.tape is None:
        analytic = np.zeros_like(x)
    else:
        (analytic,) = grad(out, [xt])
    numeric = np.empty_like(x)
    flat = numeric.reshape(-1)
    for k in range(x.size):
        xp = x.copy().reshape(-1)
        xm = x.copy().reshape(-1)
        xp[k] += step
        xm[k] -= step
        fp = float(value_of(f(Tensor(xp.reshape(x.shape)))))
        fm = float(value_of(f(Tensor(xm.reshape(x.shape)))))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise DomainError("f is not finite near x")
        flat[k] = (fp - fm) / (2.0 * step)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max()) if err.size else 0.0


# -- public wrappers ----------------------------------------------------------

def add(a, b): return apply_primitive("add", (a, b))
def sub(a, b): return apply_primitive("sub", (a, b))
def mul(a, b): return apply_primitive("mul", (a, b))
def div(a, b): return apply_primitive("div", (a, b))
def matmul(a, b): return apply_primitive("matmul", (a, b))


def dense(x, W, b, act=None):
    """Fused ``act(x @ W + b)`` with ``act`` in {None, "relu"}."""
    return apply_primitive("dense", (x, W, b), act=act)
def exp(a): return apply_primitive("exp", (a,))
def log(a): return apply_primitive("log", (a,))
def log1p(a): return apply_primitive("log1p", (a,))
def neg(a): return apply_primitive("neg", (a,))
def relu(a): return apply_primitive("relu", (a,))
def softplus(a): return apply_primitive("softplus", (a,))
def sigmoid(a): return apply_primitive("sigmoid", (a,))
def square(a): return apply_primitive("square", (a,))
def transpose(a): return apply_primitive("transpose", (a,))


def log1mexp(a):
    """``log(1 - exp(-a))`` for positive ``a``, stable at both ends."""
    return apply_primitive("log1mexp", (a,))


def reduce_sum(a, axis=None, keepdims=False):
    return apply_primitive("sum", (a,), axis=axis, keepdims=keepdims)


def reduce_mean(a, axis=None, keepdims=False):
    return apply_primitive("mean", (a,), axis=axis, keepdims=keepdims)


def concat(tensors, axis=0):
    return apply_primitive("concat", tuple(tensors), axis=axis)


def slice_(a, index):
    return apply_primitive("slice", (a,), index=index)


def broadcast(a, shape):
    return apply_primitive("broadcast", (a,), shape=tuple(shape))


def clamp(a, lo=-np.inf, hi=np.inf):
    """Clip to ``[lo, hi]``; gradient is zero outside the interval."""
    return apply_primitive("clamp", (a,), lo=lo, hi=hi)


def where(cond, a, b):
    """Select ``a`` where the constant boolean ``cond`` holds, else ``b``."""
    return apply_primitive("where", (a, b), cond=np.asarray(cond, dtype=bool))


def reshape(a, shape):
    return apply_primitive("reshape", (a,), shape=tuple(shape))
