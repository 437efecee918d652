"""Dense float64 tensors with a reverse-mode gradient tape.

Every differentiable quantity in the package is a :class:`Tensor`.  Operations
record their parents together with a vector-Jacobian closure; :class:`Tape`
orders the recorded graph topologically and runs the backward sweep.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "NonFiniteError",
    "as_tensor",
    "grad",
    "matmul",
    "concat",
    "stack",
    "where",
    "exp",
    "log",
    "sqrt",
    "abs_",
    "square",
    "clip",
    "sigmoid",
    "relu",
    "leaky_relu",
    "swish",
    "tanh",
    "softmax",
    "log_softmax",
    "logsigmoid",
    "activation",
    "ACTIVATIONS",
]


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested operation."""


class NonFiniteError(ValueError):
    """A tensor would hold NaN or infinite values."""


VJP = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """N-dimensional real array that can take part in reverse-mode differentiation.

    Parameters
    ----------
    data : array_like
        Values, converted to a float64 ndarray.
    requires_grad : bool
        Mark the tensor as a trainable leaf.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "op")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _vjp=None, op="leaf"):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values produced by '{op}'")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = tuple(_parents)
        self._vjp: VJP | None = _vjp
        self.op = op

    # basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every trainable leaf."""
        tape = Tape.record(self)
        grads = tape.run()
        for node in tape.nodes:
            if node.is_leaf and node.requires_grad:
                g = grads.get(id(node))
                if g is None:
                    g = np.zeros_like(node.data)
                node.grad = g if node.grad is None else node.grad + g

    # operators --------------------------------------------------------
    def __add__(self, other):
        return _add(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return _add(self, -as_tensor(other))

    def __rsub__(self, other):
        return _add(as_tensor(other), -self)

    def __mul__(self, other):
        return _mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return _div(as_tensor(other), self)

    def __neg__(self):
        return _unary(self, -self.data, lambda g: (-g,), "neg")

    def __pow__(self, p):
        if isinstance(p, Tensor):
            raise TypeError("only constant exponents are supported")
        p = float(p)
        x = self.data
        return _unary(self, x**p, lambda g: (g * p * x ** (p - 1.0),), "pow")

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __rmatmul__(self, other):
        return matmul(as_tensor(other), self)

    def __getitem__(self, idx):
        return _getitem(self, idx)

    # reductions and shape ---------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor(self.data.sum(axis=axis, keepdims=keepdims), _parents=(self,), _vjp=vjp, op="sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def max(self, axis=None, keepdims: bool = False) -> "Tensor":
        """Maximum; the gradient routes to the first maximal element on ties."""
        x = self.data
        if axis is None:
            flat = int(np.argmax(x))
            out = x.reshape(-1)[flat]

            def vjp(g):
                gx = np.zeros(x.size)
                gx[flat] = float(g)
                return (gx.reshape(x.shape),)

            res = np.array(out)
            if keepdims:
                res = res.reshape((1,) * x.ndim)
            return Tensor(res, _parents=(self,), _vjp=vjp, op="max")
        axis = axis % x.ndim
        idx = np.expand_dims(np.argmax(x, axis=axis), axis)
        out = np.take_along_axis(x, idx, axis=axis)

        def vjp(g):
            gk = g if keepdims else np.expand_dims(g, axis)
            gx = np.zeros_like(x)
            np.put_along_axis(gx, idx, gk, axis=axis)
            return (gx,)

        return Tensor(out if keepdims else out.squeeze(axis), _parents=(self,), _vjp=vjp, op="max")

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return _unary(self, self.data.reshape(shape), lambda g: (g.reshape(old),), "reshape")

    def transpose(self, *axes) -> "Tensor":
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        return _unary(self, self.data.transpose(axes), lambda g: (g.transpose(inv),), "transpose")

    @property
    def T(self) -> "Tensor":
        return self.transpose()


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def _unary(x: Tensor, out: np.ndarray, vjp: VJP, op: str) -> Tensor:
    return Tensor(out, _parents=(x,), _vjp=vjp, op=op)


def _add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return Tensor(
        a.data + b.data,
        _parents=(a, b),
        _vjp=lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
        op="add",
    )


def _mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    x, y = a.data, b.data
    return Tensor(
        x * y,
        _parents=(a, b),
        _vjp=lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)),
        op="mul",
    )


def _div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "div")
    x, y = a.data, b.data
    return Tensor(
        x / y,
        _parents=(a, b),
        _vjp=lambda g: (_unbroadcast(g / y, x.shape), _unbroadcast(-g * x / (y * y), y.shape)),
        op="div",
    )


def _getitem(a: Tensor, idx) -> Tensor:
    if isinstance(idx, Tensor):
        raise TypeError("index with arrays, not tensors")
    shape = a.shape

    def vjp(g):
        gx = np.zeros(shape)
        np.add.at(gx, idx, g)
        return (gx,)

    return Tensor(a.data[idx], _parents=(a,), _vjp=vjp, op="getitem")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy semantics for 1-D and batched operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul: scalar operands are not allowed")
    x = a.data[None, :] if a.ndim == 1 else a.data
    y = b.data[:, None] if b.ndim == 1 else b.data
    if x.shape[-1] != y.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    out = x @ y
    squeeze = []
    if a.ndim == 1:
        squeeze.append(out.ndim - 2)
    if b.ndim == 1:
        squeeze.append(out.ndim - 1)
    res = np.squeeze(out, axis=tuple(squeeze)) if squeeze else out

    def vjp(g):
        g = g.reshape(out.shape)
        gx = g @ np.swapaxes(y, -1, -2)
        gy = np.swapaxes(x, -1, -2) @ g
        gx = _unbroadcast(gx, x.shape).reshape(a.shape)
        gy = _unbroadcast(gy, y.shape).reshape(b.shape)
        return gx, gy

    return Tensor(res, _parents=(a, b), _vjp=vjp, op="matmul")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor(out, _parents=tuple(tensors), _vjp=vjp, op="concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack: shapes differ {sorted(shapes)}")
    out = np.stack([t.data for t in tensors], axis=axis)

    def vjp(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor(out, _parents=tuple(tensors), _vjp=vjp, op="stack")


def where(cond, a, b) -> Tensor:
    """Elementwise select; ``cond`` is a constant boolean array."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    sa, sb = a.shape, b.shape
    return Tensor(
        np.where(cond, a.data, b.data),
        _parents=(a, b),
        _vjp=lambda g: (_unbroadcast(np.where(cond, g, 0.0), sa), _unbroadcast(np.where(cond, 0.0, g), sb)),
        op="where",
    )


# elementwise functions --------------------------------------------------


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return _unary(x, y, lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise NonFiniteError("log: non-positive input")
    v = x.data
    return _unary(x, np.log(v), lambda g: (g / v,), "log")


def sqrt(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise NonFiniteError("sqrt: negative input")
    y = np.sqrt(x.data)
    return _unary(x, y, lambda g: (g * 0.5 / y,), "sqrt")


def abs_(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = np.sign(x.data)
    return _unary(x, np.abs(x.data), lambda g: (g * s,), "abs")


def square(x: Tensor) -> Tensor:
    x = as_tensor(x)
    v = x.data
    return _unary(x, v * v, lambda g: (2.0 * g * v,), "square")


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _unary(x, np.clip(x.data, lo, hi), lambda g: (g * inside,), "clip")


def _sigmoid_np(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid_np(np.atleast_1d(x.data)).reshape(x.shape)
    return _unary(x, s, lambda g: (g * s * (1.0 - s),), "sigmoid")


def logsigmoid(x: Tensor) -> Tensor:
    """ln sigmoid(x), evaluated without overflow."""
    x = as_tensor(x)
    v = x.data
    out = np.minimum(v, 0.0) - np.log1p(np.exp(-np.abs(v)))
    s = _sigmoid_np(np.atleast_1d(-v)).reshape(v.shape)
    return _unary(x, out, lambda g: (g * s,), "logsigmoid")


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    m = x.data > 0
    return _unary(x, np.where(m, x.data, 0.0), lambda g: (g * m,), "relu")


def leaky_relu(x: Tensor, alpha: float = 0.01) -> Tensor:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"leaky slope must lie in (0, 1), got {alpha}")
    x = as_tensor(x)
    m = x.data > 0
    slope = np.where(m, 1.0, alpha)
    return _unary(x, x.data * slope, lambda g: (g * slope,), "leaky_relu")


def swish(x: Tensor) -> Tensor:
    x = as_tensor(x)
    v = x.data
    s = _sigmoid_np(np.atleast_1d(v)).reshape(v.shape)
    return _unary(x, v * s, lambda g: (g * (s + v * s * (1.0 - s)),), "swish")


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _unary(x, y, lambda g: (g * (1.0 - y * y),), "tanh")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return _unary(x, s, lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),), "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)
    return _unary(x, out, lambda g: (g - s * g.sum(axis=axis, keepdims=True),), "log_softmax")


def _identity(x: Tensor) -> Tensor:
    return as_tensor(x)


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "identity": _identity,
    "sigmoid": sigmoid,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "swish": swish,
    "tanh": tanh,
}


def activation(name: str) -> Callable[[Tensor], Tensor]:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


# tape -------------------------------------------------------------------


class Tape:
    """Topologically ordered record of the graph feeding one output node."""

    def __init__(self, nodes: list[Tensor], output: Tensor):
        self.nodes = nodes
        self.output = output

    @classmethod
    def record(cls, output: Tensor) -> "Tape":
        order: list[Tensor] = []
        state: dict[int, int] = {}  # 1 = on stack, 2 = done
        stack: list[tuple[Tensor, int]] = [(output, 0)]
        while stack:
            node, i = stack.pop()
            key = id(node)
            if i == 0:
                if state.get(key) == 2:
                    continue
                state[key] = 1
            if i < len(node._parents):
                stack.append((node, i + 1))
                child = node._parents[i]
                cstate = state.get(id(child))
                if cstate == 1:
                    raise RuntimeError(f"cycle detected at node '{child.op}'")
                if cstate is None:
                    stack.append((child, 0))
            else:
                state[key] = 2
                order.append(node)
        return cls(order, output)

    def run(self, seed: np.ndarray | None = None) -> dict[int, np.ndarray]:
        """Reverse sweep; returns accumulated gradients keyed by ``id(node)``."""
        out = self.output
        if seed is None:
            if out.size != 1:
                raise ShapeError(f"backward needs a scalar output, got shape {out.shape}")
            seed = np.ones(out.shape)
        grads: dict[int, np.ndarray] = {id(out): np.asarray(seed, dtype=np.float64)}
        for node in reversed(self.nodes):
            g = grads.get(id(node))
            if g is None or node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None:
                    continue
                k = id(parent)
                if k in grads:
                    grads[k] = grads[k] + pg
                else:
                    grads[k] = np.array(pg, dtype=np.float64).reshape(parent.shape)
        return grads

    def backward(self, wrt: Iterable[Tensor]) -> list[np.ndarray]:
        grads = self.run()
        return [grads.get(id(w), np.zeros_like(w.data)) for w in wrt]


def grad(output: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of scalar ``output`` with respect to each tensor in ``wrt``.

    Tensors the output does not depend on receive zeros.
    """
    return Tape.record(output).backward(wrt)
