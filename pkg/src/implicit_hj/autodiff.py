"""Batched reverse-mode differentiation over numpy arrays.

A :class:`Tape` records primitive operations applied to :class:`Var` handles.
Every primitive is registered in ``PRIMITIVES`` with a forward function and a
vector-Jacobian product; recording an unknown name raises
:class:`UnsupportedOperation`.

Second-order quantities (parameter gradients of losses built from input
gradients of the network) are obtained by writing the input gradient itself as
tape operations and running a single reverse sweep over the result.

Code that should run both on plain arrays and on the tape uses numpy ufuncs
(dispatched through ``Var.__array_ufunc__``), the ``.sum``/``.mean`` methods and
the helpers :func:`stack`, :func:`where`, :func:`norm` and :func:`softplus`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

import numpy as np


class UnsupportedOperation(TypeError):
    """An operation without a registered primitive was applied to a Var."""


class NumericalError(FloatingPointError):
    """A non-finite value appeared where a finite one is required."""


@dataclass(frozen=True)
class Primitive:
    name: str
    fwd: Callable[..., np.ndarray]
    # vjp(g, needs, out, *operand_values, **aux) -> tuple of grads (None if not needed)
    vjp: Callable[..., tuple]


PRIMITIVES: dict[str, Primitive] = {}


def register(name: str, fwd, vjp) -> None:
    PRIMITIVES[name] = Primitive(name, fwd, vjp)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class _Node:
    __slots__ = ("op", "args", "value", "aux", "needs_grad")

    def __init__(self, op, args, value, aux, needs_grad):
        self.op = op
        self.args = args
        self.value = value
        self.aux = aux
        self.needs_grad = needs_grad


class Tape:
    """Append-only record of primitive applications.

    Node ``i`` only refers to operands with index ``< i``, so the node list is
    already in topological order for the reverse sweep.
    """

    def __init__(self) -> None:
        self.nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, value, requires_grad: bool = True) -> "Var":
        value = np.asarray(value, dtype=np.float64)
        self.nodes.append(_Node("leaf" if requires_grad else "const", (), value, None, requires_grad))
        return Var(self, len(self.nodes) - 1)

    def _operand(self, x) -> int:
        if isinstance(x, Var):
            if x.tape is not self:
                raise ValueError("operands belong to different tapes")
            return x.index
        return self.leaf(x, requires_grad=False).index

    def record(self, op: str, operands: tuple, **aux) -> "Var":
        prim = PRIMITIVES.get(op)
        if prim is None:
            raise UnsupportedOperation(f"no primitive registered for {op!r}")
        args = tuple(self._operand(x) for x in operands)
        vals = [self.nodes[i].value for i in args]
        value = prim.fwd(*vals, **aux)
        needs = any(self.nodes[i].needs_grad for i in args)
        self.nodes.append(_Node(op, args, value, aux, needs))
        return Var(self, len(self.nodes) - 1)

    def backward(self, out: "Var", seed=None) -> list:
        """Reverse sweep from ``out``; returns the adjoint of every node (None if unreached)."""
        grads: list = [None] * len(self.nodes)
        root = self.nodes[out.index]
        grads[out.index] = np.ones_like(root.value) if seed is None else np.asarray(seed, dtype=np.float64)
        for i in range(out.index, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or not node.args or not node.needs_grad:
                continue
            vals = [self.nodes[j].value for j in node.args]
            needs = tuple(self.nodes[j].needs_grad for j in node.args)
            contribs = PRIMITIVES[node.op].vjp(g, needs, node.value, *vals, **node.aux)
            for j, c, nd in zip(node.args, contribs, needs):
                if not nd or c is None:
                    continue
                grads[j] = c if grads[j] is None else grads[j] + c
        return grads

    def nbytes(self) -> int:
        """Bytes held by recorded values: the memory footprint of one sweep."""
        return int(sum(n.value.nbytes for n in self.nodes))

    def replay(self) -> list[np.ndarray]:
        """Re-evaluate every node from the stored leaves."""
        values: list[np.ndarray] = []
        for node in self.nodes:
            if not node.args:
                values.append(node.value)
            else:
                prim = PRIMITIVES[node.op]
                values.append(prim.fwd(*[values[j] for j in node.args], **node.aux))
        return values


_UFUNCS = {
    np.add: "add",
    np.subtract: "sub",
    np.multiply: "mul",
    np.true_divide: "div",
    np.negative: "neg",
    np.square: "square",
    np.sqrt: "sqrt",
    np.exp: "exp",
    np.log: "log",
    np.sin: "sin",
    np.cos: "cos",
    np.absolute: "abs",
    np.sign: "sign",
    np.maximum: "maximum",
    np.minimum: "minimum",
}


class Var:
    """Handle to a tape node; behaves like a read-only float64 array."""

    __slots__ = ("tape", "index")
    __array_priority__ = 1000.0

    def __init__(self, tape: Tape, index: int) -> None:
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __len__(self) -> int:
        return len(self.value)

    def __repr__(self) -> str:
        return f"Var(#{self.index}, shape={self.shape})"

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        name = _UFUNCS.get(ufunc)
        if method != "__call__" or name is None or kwargs:
            raise UnsupportedOperation(f"{ufunc.__name__}.{method} is not a registered primitive")
        return self.tape.record(name, inputs)

    def __add__(self, o): return self.tape.record("add", (self, o))
    def __radd__(self, o): return self.tape.record("add", (o, self))
    def __sub__(self, o): return self.tape.record("sub", (self, o))
    def __rsub__(self, o): return self.tape.record("sub", (o, self))
    def __mul__(self, o): return self.tape.record("mul", (self, o))
    def __rmul__(self, o): return self.tape.record("mul", (o, self))
    def __truediv__(self, o): return self.tape.record("div", (self, o))
    def __rtruediv__(self, o): return self.tape.record("div", (o, self))
    def __neg__(self): return self.tape.record("neg", (self,))
    def __matmul__(self, o): return self.tape.record("matmul", (self, o))
    def __rmatmul__(self, o): return self.tape.record("matmul", (o, self))

    def __pow__(self, k):
        if k == 2:
            return self.tape.record("square", (self,))
        if isinstance(k, Var):
            raise UnsupportedOperation("variable exponents are not supported")
        return self.tape.record("pow", (self,), k=float(k))

    def __getitem__(self, idx):
        return self.tape.record("getitem", (self,), idx=idx)

    def sum(self, axis=None, dtype=None, out=None, keepdims=False):
        if out is not None:
            raise UnsupportedOperation("sum(out=...)")
        return self.tape.record("sum", (self,), axis=axis, keepdims=keepdims)

    def mean(self, axis=None, dtype=None, out=None, keepdims=False):
        n = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return self.tape.record("reshape", (self,), shape=tuple(shape))

    @property
    def T(self):
        return self.tape.record("transpose", (self,))


def value_of(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(*xs) -> Tape | None:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


# ---------------------------------------------------------------- primitives

def _ub(g, v):
    return _unbroadcast(g, np.shape(v))


register("add", np.add, lambda g, n, out, a, b: (_ub(g, a) if n[0] else None, _ub(g, b) if n[1] else None))
register("sub", np.subtract, lambda g, n, out, a, b: (_ub(g, a) if n[0] else None, _ub(-g, b) if n[1] else None))
register("mul", np.multiply, lambda g, n, out, a, b: (_ub(g * b, a) if n[0] else None, _ub(g * a, b) if n[1] else None))
register(
    "div",
    np.true_divide,
    lambda g, n, out, a, b: (_ub(g / b, a) if n[0] else None, _ub(-g * out / b, b) if n[1] else None),
)
register("neg", np.negative, lambda g, n, out, a: (-g,))
register("square", np.square, lambda g, n, out, a: (2.0 * a * g,))
register("pow", lambda a, k: np.power(a, k), lambda g, n, out, a, k: (k * np.power(a, k - 1.0) * g,))
register("sqrt", np.sqrt, lambda g, n, out, a: (0.5 * g / out,))
register("exp", np.exp, lambda g, n, out, a: (g * out,))
register("log", np.log, lambda g, n, out, a: (g / a,))
register("sin", np.sin, lambda g, n, out, a: (g * np.cos(a),))
register("cos", np.cos, lambda g, n, out, a: (-g * np.sin(a),))
# subgradient 0 at the kink
register("abs", np.abs, lambda g, n, out, a: (g * np.sign(a),))
register("sign", np.sign, lambda g, n, out, a: (np.zeros_like(a),))


def _max_vjp(g, n, out, a, b):
    pick = np.asarray(a) >= np.asarray(b)
    return (_ub(np.where(pick, g, 0.0), a) if n[0] else None, _ub(np.where(pick, 0.0, g), b) if n[1] else None)


def _min_vjp(g, n, out, a, b):
    pick = np.asarray(a) <= np.asarray(b)
    return (_ub(np.where(pick, g, 0.0), a) if n[0] else None, _ub(np.where(pick, 0.0, g), b) if n[1] else None)


register("maximum", np.maximum, _max_vjp)
register("minimum", np.minimum, _min_vjp)


def _matmul_vjp(g, n, out, a, b):
    # 1-D and 2-D operands only
    ga = gb = None
    if n[0]:
        ga = g @ b.T if b.ndim == 2 else np.multiply.outer(g, b)
    if n[1]:
        gb = a.T @ g if a.ndim == 2 else np.multiply.outer(a, g)
    return ga, gb


register("matmul", np.matmul, _matmul_vjp)
register("transpose", np.transpose, lambda g, n, out, a: (g.T,))


def _affine(a, w, b):
    return a @ w.T + b


def _affine_vjp(g, n, out, a, w, b):
    return (
        g @ w if n[0] else None,
        g.T @ a if n[1] else None,
        g.sum(axis=0) if n[2] else None,
    )


# a @ W.T + b for a batch of row vectors: the dense layer primitive
register("affine", _affine, _affine_vjp)


def _sum_fwd(a, axis, keepdims):
    return np.sum(a, axis=axis, keepdims=keepdims)


def _sum_vjp(g, n, out, a, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape).copy(),)


register("sum", _sum_fwd, _sum_vjp)
register("reshape", lambda a, shape: np.reshape(a, shape), lambda g, n, out, a, shape: (np.reshape(g, a.shape),))


def _getitem_vjp(g, n, out, a, idx):
    z = np.zeros_like(a)
    np.add.at(z, idx, g)
    return (z,)


register("getitem", lambda a, idx: a[idx], _getitem_vjp)


def _stack_vjp(g, n, out, *xs, axis):
    parts = np.moveaxis(g, axis, 0)
    return tuple(parts[i] if n[i] else None for i in range(len(xs)))


register("stack", lambda *xs, axis: np.stack(np.broadcast_arrays(*xs), axis=axis), _stack_vjp)


def _concat_vjp(g, n, out, *xs, axis):
    edges = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return tuple(np.split(g, edges, axis=axis))


register("concat", lambda *xs, axis: np.concatenate(xs, axis=axis), _concat_vjp)


def _where_vjp(g, n, out, cond, a, b):
    return (None, _ub(np.where(cond, g, 0.0), a) if n[1] else None, _ub(np.where(cond, 0.0, g), b) if n[2] else None)


register("where", lambda cond, a, b: np.where(cond, a, b), _where_vjp)


def _softplus_slope(z, beta):
    # logistic(beta * z) via tanh: no overflow, no slow exp paths
    return 0.5 + 0.5 * np.tanh((0.5 * beta) * z)


def _softplus(z, slope, beta):
    # log(1 + exp(-|bz|)) == -log(logistic(|bz|)) and logistic(|bz|) == 0.5 + |slope - 0.5|
    return (np.maximum(beta * z, 0.0) - np.log(0.5 + np.abs(slope - 0.5))) * (1.0 / beta)


# ``slope`` is a cached function of ``z``; the full derivative flows through ``z``
register("softplus", _softplus, lambda g, n, out, z, slope, beta: (g * slope, None))


def _slope_vjp(g, n, out, z, beta):
    return (g * beta * out * (1.0 - out),)


# derivative of softplus; its own vjp carries the second derivative
register("softplus_slope", _softplus_slope, _slope_vjp)


def _norm_fwd(a, eps):
    return np.sqrt(np.sum(a * a, axis=-1) + eps * eps)


def _norm_vjp(g, n, out, a, eps):
    # at a = 0 with eps = 0 the zero subgradient is used
    unit = np.divide(a, out[..., None], out=np.zeros(np.shape(a)), where=out[..., None] > 0)
    return (g[..., None] * unit,)


# sqrt(|a|^2 + eps^2) along the last axis; eps > 0 makes it smooth at a = 0
register("norm", _norm_fwd, _norm_vjp)


# ------------------------------------------------ array-agnostic helpers

def stack(xs, axis: int = -1):
    tape = _tape_of(*xs)
    if tape is None:
        return np.stack(np.broadcast_arrays(*xs), axis=axis)
    return tape.record("stack", tuple(xs), axis=axis)


def concat(xs, axis: int = -1):
    tape = _tape_of(*xs)
    if tape is None:
        return np.concatenate(xs, axis=axis)
    return tape.record("concat", tuple(xs), axis=axis)


def where(cond, a, b):
    """``np.where`` with a constant condition."""
    cond = np.asarray(value_of(cond), dtype=bool)
    tape = _tape_of(a, b)
    if tape is None:
        return np.where(cond, a, b)
    return tape.record("where", (cond, a, b))


def norm(a, eps: float = 0.0):
    """Regularized Euclidean norm ``sqrt(|a|^2 + eps^2)`` over the last axis."""
    if isinstance(a, Var):
        return a.tape.record("norm", (a,), eps=eps)
    return _norm_fwd(np.asarray(a), eps)


def softplus(z, beta: float, slope=None):
    """(1/beta) * log(1 + exp(beta * z)); pass ``slope`` to reuse softplus_slope(z)."""
    if slope is None:
        slope = softplus_slope(z, beta)
    tape = _tape_of(z, slope)
    if tape is None:
        return _softplus(z, slope, beta)
    return tape.record("softplus", (z, slope), beta=beta)


def softplus_slope(z, beta: float):
    if isinstance(z, Var):
        return z.tape.record("softplus_slope", (z,), beta=beta)
    return _softplus_slope(z, beta)


def affine(a, w, b):
    tape = _tape_of(a, w, b)
    if tape is None:
        return _affine(a, w, b)
    return tape.record("affine", (a, w, b))


# ------------------------------------------------------------- drivers

def grad(fn: Callable[[Var], Any], point) -> np.ndarray:
    """Gradient of a scalar function of one array argument."""
    tape = Tape()
    x = tape.leaf(np.asarray(point, dtype=np.float64))
    out = fn(x)
    if not isinstance(out, Var):
        return np.zeros_like(x.value)
    if out.value.size != 1:
        raise ValueError("grad() needs a scalar output")
    g = tape.backward(out)[x.index]
    return np.zeros_like(x.value) if g is None else g


def param_gradient(loss_builder: Callable, params) -> tuple[float, np.ndarray]:
    """Loss value and its gradient with respect to every parameter array.

    ``params`` provides ``on_tape(tape)`` and ``arrays()``; the gradient is
    flattened in ``arrays()`` order. A builder that returns a plain number
    (e.g. an empty reduction) yields a zero gradient.
    """
    tape = Tape()
    live = params.on_tape(tape)
    out = loss_builder(live)
    leaves = live.arrays()
    if not isinstance(out, Var):
        value = float(np.sum(out))
        return value, np.zeros(sum(np.size(value_of(a)) for a in leaves))
    if out.value.size != 1:
        raise ValueError("loss_builder must return a scalar")
    value = float(out.value)
    if not np.isfinite(value):
        raise NumericalError(f"loss is {value}")
    grads = tape.backward(out)
    flat = [
        np.zeros(a.value.size) if grads[a.index] is None else np.ravel(grads[a.index])
        for a in leaves
    ]
    return value, np.concatenate(flat)


def _total(y):
    return y.sum() if isinstance(y, Var) and y.value.size != 1 else y


def fd_check(fn: Callable, point, h: float = 1e-5, analytic=None) -> float:
    """Max relative discrepancy between the tape gradient and central differences.

    ``fn`` must accept both plain arrays and Vars. Returns
    ``max_i |a_i - fd_i| / (|a_i| + 1e-12)``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x0 = np.atleast_1d(np.asarray(point, dtype=np.float64))
    a = grad(lambda v: _total(fn(v)), x0) if analytic is None else np.atleast_1d(np.asarray(analytic, dtype=np.float64))
    a = np.ravel(a)
    fd = np.empty(x0.size)
    flat = x0.ravel()
    for i in range(x0.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += h
        xm[i] -= h
        fp = float(np.sum(fn(xp.reshape(x0.shape))))
        fm = float(np.sum(fn(xm.reshape(x0.shape))))
        fd[i] = (fp - fm) / (2.0 * h)
    return float(np.max(np.abs(a - fd) / (np.abs(a) + 1e-12))) if a.size else 0.0
