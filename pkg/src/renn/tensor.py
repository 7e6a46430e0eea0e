"""A small reverse-mode autodiff tape over dense float64 arrays, plus Adam.

Only the operations needed by the region-energy network and the learning loop
are provided. Every op records a forward closure and a backward closure on the
owning :class:`Tape`; :meth:`Tape.backward` walks them in reverse order.

Example::

    tape = Tape()
    p = tape.parameter([1.0, 2.0])
    loss = tsum(p * p)
    value, (grad,) = forward_backward(tape, loss)   # grad == [2., 4.]
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ContractViolation, NumericFault

__all__ = [
    "Tensor", "Tape", "Adam", "forward_backward",
    "add", "sub", "mul", "scale", "add_scalar", "matmul", "linear", "tanh",
    "exp", "log", "softmax", "tsum", "mean", "gather", "reshape", "concat",
    "sqdiff",
]


def _check_finite(name, value):
    if not np.all(np.isfinite(value)):
        raise NumericFault(f"non-finite value produced by op '{name}'")


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node on a tape. ``data`` is always a float64 ndarray."""

    __slots__ = ("data", "tape", "index", "is_param", "name")

    def __init__(self, data, tape: "Tape", index: int, is_param=False, name=None):
        self.data = data
        self.tape = tape
        self.index = index
        self.is_param = is_param
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(self.tape.constant(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        kind = "param" if self.is_param else "node"
        return f"Tensor({kind}#{self.index}, shape={self.data.shape})"


class _Op:
    __slots__ = ("name", "inputs", "forward", "backward", "output")

    def __init__(self, name, inputs, forward, backward, output):
        self.name = name
        self.inputs = inputs
        self.forward = forward
        self.backward = backward
        self.output = output


class Tape:
    """Ordered record of primitive operations.

    Parameters (leaves with gradient slots) survive :meth:`reset`; recorded
    operations and constants do not.
    """

    def __init__(self):
        self.params: list[Tensor] = []
        self.nodes: list[Tensor] = []
        self.ops: list[_Op] = []

    def parameter(self, value, name=None) -> Tensor:
        data = np.array(value, dtype=np.float64)
        _check_finite("parameter", data)
        t = Tensor(data, self, -1, is_param=True, name=name)
        self.params.append(t)
        return t

    def constant(self, value) -> Tensor:
        data = np.asarray(value, dtype=np.float64)
        t = Tensor(data, self, len(self.nodes))
        self.nodes.append(t)
        return t

    def reset(self):
        self.nodes = []
        self.ops = []

    def _as_tensor(self, x) -> Tensor:
        if isinstance(x, Tensor):
            if x.tape is not self:
                raise ContractViolation("tensor belongs to a different tape")
            return x
        return self.constant(x)

    def record(self, name: str, inputs: Sequence[Tensor], forward: Callable,
               backward: Callable) -> Tensor:
        inputs = [self._as_tensor(x) for x in inputs]
        out_data = forward(*[x.data for x in inputs])
        _check_finite(name, out_data)
        out = Tensor(out_data, self, len(self.nodes))
        self.nodes.append(out)
        self.ops.append(_Op(name, inputs, forward, backward, out))
        return out

    def replay(self) -> list[np.ndarray]:
        """Re-run every recorded op from current leaf values, in order.

        Returns the recomputed outputs; node data is updated in place.
        """
        outs = []
        for op in self.ops:
            data = op.forward(*[x.data for x in op.inputs])
            _check_finite(op.name, data)
            op.output.data = data
            outs.append(data)
        return outs

    def backward(self, loss: Tensor) -> list[np.ndarray]:
        if loss.data.size != 1:
            raise ContractViolation(
                f"backward needs a scalar loss, got shape {loss.data.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for op in reversed(self.ops):
            g = grads.pop(id(op.output), None)
            if g is None:
                continue
            in_grads = op.backward(g, *[x.data for x in op.inputs], op.output.data)
            for x, gx in zip(op.inputs, in_grads):
                if gx is None:
                    continue
                _check_finite(f"{op.name}.backward", gx)
                key = id(x)
                if key in grads:
                    grads[key] = grads[key] + gx
                else:
                    grads[key] = gx
        return [grads.get(id(p), np.zeros_like(p.data)) for p in self.params]


def forward_backward(tape: Tape, loss: Tensor) -> tuple[float, list[np.ndarray]]:
    """Loss value and one gradient array per tape parameter."""
    grads = tape.backward(loss)
    return loss.item(), grads


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Tensor):
            return x.tape
    raise ContractViolation("at least one operand must be a Tensor")


# ---- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    return _tape_of(a, b).record(
        "add", [a, b], lambda x, y: x + y,
        lambda g, x, y, out: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape)))


def sub(a, b) -> Tensor:
    return _tape_of(a, b).record(
        "sub", [a, b], lambda x, y: x - y,
        lambda g, x, y, out: (_unbroadcast(g, x.shape), -_unbroadcast(g, y.shape)))


def mul(a, b) -> Tensor:
    return _tape_of(a, b).record(
        "mul", [a, b], lambda x, y: x * y,
        lambda g, x, y, out: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return a.tape.record("scale", [a], lambda x: c * x, lambda g, x, out: (c * g,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return a.tape.record("add_scalar", [a], lambda x: x + c, lambda g, x, out: (g,))


def sqdiff(a, b) -> Tensor:
    """Elementwise ``(a - b) ** 2``."""
    def bwd(g, x, y, out):
        d = 2.0 * g * (x - y)
        return _unbroadcast(d, x.shape), -_unbroadcast(d, y.shape)
    return _tape_of(a, b).record("sqdiff", [a, b], lambda x, y: (x - y) ** 2, bwd)


def tanh(a: Tensor) -> Tensor:
    return a.tape.record("tanh", [a], np.tanh, lambda g, x, out: (g * (1.0 - out * out),))


def exp(a: Tensor) -> Tensor:
    return a.tape.record("exp", [a], np.exp, lambda g, x, out: (g * out,))


def log(a: Tensor, eps: float = 0.0) -> Tensor:
    """Natural log of ``a + eps``."""
    eps = float(eps)
    return a.tape.record("log", [a], lambda x: np.log(x + eps),
                         lambda g, x, out: (g / (x + eps),))


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, max-subtracted."""
    def fwd(x):
        z = np.exp(x - x.max(axis=-1, keepdims=True))
        return z / z.sum(axis=-1, keepdims=True)

    def bwd(g, x, out):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)
    return a.tape.record("softmax", [a], fwd, bwd)


# ---- linear algebra --------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Dense matrix product of two 2-D operands."""
    def bwd(g, x, y, out):
        return g @ y.T, x.T @ g
    return _tape_of(a, b).record("matmul", [a, b], lambda x, y: x @ y, bwd)


def linear(matrix, x: Tensor) -> Tensor:
    """``matrix @ x`` for a constant (dense or scipy.sparse) matrix and vector x."""
    if sp.issparse(matrix):
        matrix = sp.csr_matrix(matrix)
        mt = sp.csr_matrix(matrix.T)
    else:
        matrix = np.asarray(matrix, dtype=np.float64)
        mt = matrix.T
    if matrix.shape[1] != x.data.shape[0]:
        raise ContractViolation(
            f"linear: matrix {matrix.shape} incompatible with vector {x.data.shape}")
    return x.tape.record("linear", [x], lambda v: np.asarray(matrix @ v),
                         lambda g, v, out: (np.asarray(mt @ g),))


# ---- reductions and indexing ------------------------------------------------

def tsum(a: Tensor, axis=None) -> Tensor:
    def bwd(g, x, out):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)
    return a.tape.record("sum", [a], lambda x: np.asarray(x.sum(axis=axis)), bwd)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(tsum(a, axis=axis), 1.0 / n)


def gather(a: Tensor, index) -> Tensor:
    """``a[index]`` for an integer index array (or slice); gradient scatters back."""
    index = np.asarray(index) if not isinstance(index, slice) else index

    def bwd(g, x, out):
        gx = np.zeros_like(x)
        np.add.at(gx, index, g)
        return (gx,)
    return a.tape.record("gather", [a], lambda x: x[index], bwd)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return a.tape.record("reshape", [a], lambda x: x.reshape(shape),
                         lambda g, x, out: (g.reshape(x.shape),))


def concat(parts: Sequence[Tensor], axis=0) -> Tensor:
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g, *args):
        return tuple(np.split(g, splits, axis=axis))
    return _tape_of(*parts).record(
        "concat", list(parts), lambda *xs: np.concatenate(xs, axis=axis), bwd)


# ---- optimizer ---------------------------------------------------------------

class Adam:
    """Adaptive-moment optimizer; updates parameter arrays in place."""

    def __init__(self, params: Sequence, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        arrays = [p.data if isinstance(p, Tensor) else p for p in params]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]

    def step(self, params: Sequence, grads: Sequence[np.ndarray]):
        arrays = [p.data if isinstance(p, Tensor) else p for p in params]
        if len(arrays) != len(self.m) or len(grads) != len(arrays):
            raise ContractViolation("parameter/gradient count does not match optimizer state")
        for a, g, m in zip(arrays, grads, self.m):
            if a.shape != m.shape or np.shape(g) != a.shape:
                raise ContractViolation(
                    f"shape mismatch: param {a.shape}, grad {np.shape(g)}, state {m.shape}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params
