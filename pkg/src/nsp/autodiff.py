"""Reverse-mode automatic differentiation on a tape of numpy array operations.

Every elementary operation applied to a :class:`Var` is appended to the
owning :class:`Tape` together with its inputs and vector-Jacobian products.
A single reverse sweep then yields gradients with respect to any set of leaf
variables.

Forward-mode input derivatives are provided by :class:`Dual`, which carries a
value and its tangents along the three input coordinates.  Tangent arithmetic
goes through the same dispatching functions as values, so when the network
parameters are tape variables the tangents are taped too and the reverse
sweep differentiates through them.  That is how losses containing the input
gradient of the field get exact parameter gradients without a dedicated
second-order mode.

The functions in this module accept plain arrays, :class:`Var` or
:class:`Dual` and use the same numpy kernels in each case, so an untaped
evaluation is bit-identical to the taped one.
"""
from __future__ import annotations

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when a taped operation produces NaN or Inf."""


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softplus(a, beta):
    t = beta * a
    return (np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))) / beta


def _matmul(a, b):
    # numpy runs an (..., m, k) @ (k, n) product as many small ones; flatten it
    if a.ndim > 2:
        return (a.reshape(-1, a.shape[-1]) @ b).reshape(a.shape[:-1] + (b.shape[-1],))
    return a @ b


def _safe_norm(a):
    return np.sqrt(np.sum(a * a, axis=-1, keepdims=True))


def _normalize(a, eps, fallback):
    n = _safe_norm(a)
    active = n > eps
    return np.where(active, a / np.where(active, n, 1.0), np.asarray(fallback, dtype=a.dtype))


def _matmul_grad_b(g, a, b):
    if a.ndim == 1:
        return np.outer(a, g)
    return a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])


def _sum_grad(g, a, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, a.shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, a.shape)


def _getitem_grad(g, a, index):
    out = np.zeros(a.shape, dtype=g.dtype)
    np.add.at(out, index, g)
    return out


def _concat_grads(n):
    def make(i):
        def vjp(g, out, *inputs, axis):
            start = sum(x.shape[axis] for x in inputs[:i])
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + inputs[i].shape[axis])
            return g[tuple(sl)]
        return vjp
    return tuple(make(i) for i in range(n))


# name -> (forward kernel, per-input vjp).  A vjp receives the upstream
# gradient, the node output and the input values and returns the gradient
# for its input (before un-broadcasting).
_OPS = {
    "add": (np.add, (lambda g, o, a, b: g, lambda g, o, a, b: g)),
    "sub": (np.subtract, (lambda g, o, a, b: g, lambda g, o, a, b: -g)),
    "mul": (np.multiply, (lambda g, o, a, b: g * b, lambda g, o, a, b: g * a)),
    "div": (np.divide, (lambda g, o, a, b: g / b, lambda g, o, a, b: -g * o / b)),
    "neg": (np.negative, (lambda g, o, a: -g,)),
    "matmul": (_matmul, (lambda g, o, a, b: _matmul(g, b.T), lambda g, o, a, b: _matmul_grad_b(g, a, b))),
    "square": (np.square, (lambda g, o, a: 2.0 * a * g,)),
    "sqrt": (np.sqrt, (lambda g, o, a: np.where(o > 0, 0.5 * g / np.where(o > 0, o, 1.0), 0.0),)),
    # sign(0) = 0 gives the subgradient 0 at the kink
    "abs": (np.abs, (lambda g, o, a: g * np.sign(a),)),
    "tanh": (np.tanh, (lambda g, o, a: g * (1.0 - o * o),)),
    "softplus": (_softplus, (lambda g, o, a, beta: g * _sigmoid(beta * a),)),
    "sigmoid": (lambda a, beta: _sigmoid(beta * a), (lambda g, o, a, beta: g * beta * o * (1.0 - o),)),
    "sum": (lambda a, axis, keepdims: np.sum(a, axis=axis, keepdims=keepdims),
            (lambda g, o, a, axis, keepdims: _sum_grad(g, a, axis, keepdims),)),
    "dot": (lambda a, b: np.sum(a * b, axis=-1, keepdims=True),
            (lambda g, o, a, b: g * b, lambda g, o, a, b: g * a)),
    "norm": (lambda a, eps: _safe_norm(a),
             (lambda g, o, a, eps: np.where(o > eps, g * a / np.where(o > eps, o, 1.0), 0.0),)),
    "normalize": (_normalize,
                  (lambda g, o, a, eps, fallback: _normalize_grad(g, o, a, eps),)),
    "reshape": (lambda a, shape: np.reshape(a, shape), (lambda g, o, a, shape: g.reshape(a.shape),)),
    "getitem": (lambda a, index: a[index], (lambda g, o, a, index: _getitem_grad(g, a, index),)),
    "broadcast_to": (lambda a, shape: np.broadcast_to(a, shape).copy(),
                     (lambda g, o, a, shape: g,)),
}


def _normalize_grad(g, o, a, eps):
    n = _safe_norm(a)
    active = n > eps
    proj = g - o * np.sum(o * g, axis=-1, keepdims=True)
    return np.where(active, proj / np.where(active, n, 1.0), 0.0)


def _kernel(op, attrs):
    if op == "concat":
        return lambda *xs: np.concatenate(xs, axis=attrs["axis"])
    fwd = _OPS[op][0]
    return (lambda *xs: fwd(*xs, **attrs)) if attrs else fwd


def _vjps(op, n_inputs):
    if op == "concat":
        return _concat_grads(n_inputs)
    return _OPS[op][1]


class _Node:
    __slots__ = ("op", "value", "parents", "attrs", "requires_grad")

    def __init__(self, op, value, parents, attrs, requires_grad):
        self.op = op
        self.value = value
        self.parents = parents
        self.attrs = attrs
        self.requires_grad = requires_grad


class Tape:
    """Append-only record of array operations.

    A tape is owned by one computation; build a fresh tape per loss
    evaluation.  ``check_finite`` makes every recorded operation verify its
    output, so a NaN is reported at the node that produced it.
    """

    def __init__(self, check_finite=True):
        self.nodes = []
        self.check_finite = check_finite

    def __len__(self):
        return len(self.nodes)

    def variable(self, value, name=None):
        """A leaf whose gradient is wanted."""
        return self._leaf(value, "variable", True, name)

    def constant(self, value, name=None):
        """A leaf that is excluded from differentiation (a detached value)."""
        return self._leaf(value, "constant", False, name)

    def _leaf(self, value, op, requires_grad, name):
        value = np.asarray(value, dtype=np.float64)
        self.nodes.append(_Node(op, value, (), {"name": name} if name else {}, requires_grad))
        return Var(self, len(self.nodes) - 1)

    def record(self, op, inputs, attrs=None):
        attrs = attrs or {}
        parents = tuple(x.index for x in inputs)
        values = [self.nodes[i].value for i in parents]
        out = _kernel(op, attrs)(*values)
        if self.check_finite and not np.all(np.isfinite(out)):
            raise NonFiniteError(f"non-finite value at tape node {len(self.nodes)} ({op})")
        requires_grad = any(self.nodes[i].requires_grad for i in parents)
        self.nodes.append(_Node(op, out, parents, attrs, requires_grad))
        return Var(self, len(self.nodes) - 1)

    def detach(self, x):
        return self.constant(x.value if isinstance(x, Var) else x)

    def gradient(self, output, wrt):
        """Gradients of the scalar ``output`` with respect to the leaves ``wrt``."""
        if output.tape is not self:
            raise ValueError("output belongs to a different tape")
        if output.value.size != 1:
            raise ValueError("gradient() needs a scalar output")
        if not np.all(np.isfinite(output.value)):
            raise NonFiniteError(f"non-finite output at tape node {output.index}")
        grads = {output.index: np.ones_like(output.value)}
        for i in range(output.index, -1, -1):
            g = grads.pop(i, None)
            node = self.nodes[i]
            if g is None or not node.parents:
                if g is not None:
                    grads[i] = g
                continue
            values = [self.nodes[p].value for p in node.parents]
            for p, vjp in zip(node.parents, _vjps(node.op, len(node.parents))):
                if not self.nodes[p].requires_grad:
                    continue
                gp = _unbroadcast(vjp(g, node.value, *values, **node.attrs), self.nodes[p].value.shape)
                if p in grads:
                    grads[p] = grads[p] + gp
                else:
                    grads[p] = gp
        out = []
        for v in wrt:
            g = grads.get(v.index)
            out.append(np.zeros_like(v.value) if g is None else np.array(g, dtype=np.float64).reshape(v.shape))
        for g, v in zip(out, wrt):
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for tape node {v.index}")
        return out

    def replay(self, leaves=None):
        """Recompute every node from its leaves; returns the list of values.

        ``leaves`` optionally maps leaf indices to replacement values.
        """
        leaves = leaves or {}
        values = []
        for i, node in enumerate(self.nodes):
            if not node.parents:
                values.append(np.asarray(leaves.get(i, node.value), dtype=np.float64))
            else:
                values.append(_kernel(node.op, node.attrs)(*[values[p] for p in node.parents]))
        return values


class Var:
    """Handle to a value recorded on a :class:`Tape`."""

    __slots__ = ("tape", "index")
    # make numpy defer binary operators to Var
    __array_ufunc__ = None

    def __init__(self, tape, index):
        self.tape = tape
        self.index = index

    @property
    def value(self):
        return self.tape.nodes[self.index].value

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(node={self.index}, shape={self.shape})"

    def _lift(self, other):
        return other if isinstance(other, Var) else self.tape.constant(other)

    def __add__(self, other):
        return self.tape.record("add", (self, self._lift(other)))

    def __radd__(self, other):
        return self.tape.record("add", (self._lift(other), self))

    def __sub__(self, other):
        return self.tape.record("sub", (self, self._lift(other)))

    def __rsub__(self, other):
        return self.tape.record("sub", (self._lift(other), self))

    def __mul__(self, other):
        return self.tape.record("mul", (self, self._lift(other)))

    def __rmul__(self, other):
        return self.tape.record("mul", (self._lift(other), self))

    def __truediv__(self, other):
        return self.tape.record("div", (self, self._lift(other)))

    def __rtruediv__(self, other):
        return self.tape.record("div", (self._lift(other), self))

    def __neg__(self):
        return self.tape.record("neg", (self,))

    def __matmul__(self, other):
        other = self._lift(other)
        if other.ndim != 2:
            raise ValueError("matmul supports a 2-D right operand only")
        return self.tape.record("matmul", (self, other))

    def __rmatmul__(self, other):
        return self._lift(other) @ self

    def __pow__(self, exponent):
        if exponent != 2:
            raise ValueError("only squaring is supported")
        return self.tape.record("square", (self,))

    def __getitem__(self, index):
        return self.tape.record("getitem", (self,), {"index": index})

    def sum(self, axis=None, keepdims=False):
        return self.tape.record("sum", (self,), {"axis": axis, "keepdims": keepdims})

    def mean(self, axis=None):
        n = self.value.size if axis is None else self.shape[axis]
        return self.sum(axis=axis) / float(n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return self.tape.record("reshape", (self,), {"shape": tuple(shape)})


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _apply(op, inputs, **attrs):
    tape = _tape_of(*inputs)
    if tape is None:
        return _kernel(op, attrs)(*[np.asarray(x, dtype=np.float64) for x in inputs])
    return tape.record(op, tuple(x if isinstance(x, Var) else tape.constant(x) for x in inputs), attrs)


def value_of(x):
    """The numeric value behind an array, :class:`Var` or :class:`Dual`."""
    if isinstance(x, Dual):
        return value_of(x.value)
    if isinstance(x, Var):
        return x.value
    return np.asarray(x)


class Dual:
    """A value with its derivatives along the three input coordinates.

    ``value`` has shape ``(..., n)``; ``tangent`` has shape ``(..., 3, n)``
    with ``tangent[..., j, :]`` the derivative of the value with respect to
    input coordinate ``j``.  Both may be arrays or taped :class:`Var`.
    """

    __slots__ = ("value", "tangent")

    def __init__(self, value, tangent):
        self.value = value
        self.tangent = tangent

    @classmethod
    def seed(cls, x):
        """Independent-variable dual for points ``x`` of shape ``(..., 3)``."""
        x_val = value_of(x)
        eye = np.broadcast_to(np.eye(3), x_val.shape[:-1] + (3, 3)).copy()
        return cls(x, eye)

    @property
    def shape(self):
        return value_of(self.value).shape

    def _parts(self, other):
        if isinstance(other, Dual):
            return other.value, other.tangent
        return other, None

    def __add__(self, other):
        v, t = self._parts(other)
        tangent = self.tangent if t is None else _apply("add", (self.tangent, t))
        return Dual(_apply("add", (self.value, v)), tangent)

    __radd__ = __add__

    def __sub__(self, other):
        v, t = self._parts(other)
        tangent = self.tangent if t is None else _apply("sub", (self.tangent, t))
        return Dual(_apply("sub", (self.value, v)), tangent)

    def __rsub__(self, other):
        return Dual(_apply("sub", (other, self.value)), _apply("neg", (self.tangent,)))

    def __neg__(self):
        return Dual(_apply("neg", (self.value,)), _apply("neg", (self.tangent,)))

    def __mul__(self, other):
        v, t = self._parts(other)
        value = _apply("mul", (self.value, v))
        if t is None:
            return Dual(value, _apply("mul", (self.tangent, expand(v))))
        tangent = _apply("add", (_apply("mul", (self.tangent, expand(v))),
                                 _apply("mul", (t, expand(self.value)))))
        return Dual(value, tangent)

    __rmul__ = __mul__

    def __matmul__(self, weight):
        if isinstance(weight, Dual):
            raise TypeError("matmul with a Dual right operand is not supported")
        return Dual(matmul(self.value, weight), matmul(self.tangent, weight))

    def __getitem__(self, index):
        raise TypeError("index the value or tangent of a Dual explicitly")


def expand(x):
    """Insert the tangent axis: ``(..., n) -> (..., 1, n)``."""
    shape = value_of(x).shape
    new_shape = shape[:-1] + (1, shape[-1]) if len(shape) else (1, 1)
    return _apply("reshape", (x,), shape=new_shape)


def matmul(a, b):
    return _apply("matmul", (a, b))


def square(x):
    if isinstance(x, Dual):
        return x * x
    return _apply("square", (x,))


def sqrt(x):
    if isinstance(x, Dual):
        s = _apply("sqrt", (x.value,))
        return Dual(s, _apply("div", (x.tangent, expand(_apply("mul", (2.0, s))))))
    return _apply("sqrt", (x,))


def absolute(x):
    if isinstance(x, Dual):
        sign = np.sign(value_of(x.value))
        return Dual(_apply("abs", (x.value,)), _apply("mul", (x.tangent, expand(sign))))
    return _apply("abs", (x,))


def tanh(x):
    if isinstance(x, Dual):
        t = _apply("tanh", (x.value,))
        slope = _apply("sub", (1.0, _apply("square", (t,))))
        return Dual(t, _apply("mul", (x.tangent, expand(slope))))
    return _apply("tanh", (x,))


def sigmoid(x, beta=1.0):
    """Logistic function of ``beta * x``."""
    return _apply("sigmoid", (x,), beta=float(beta))


def softplus(x, beta=100.0):
    """``log(1 + exp(beta * x)) / beta``; its derivative is ``sigmoid(x, beta)``."""
    if isinstance(x, Dual):
        s = _apply("softplus", (x.value,), beta=float(beta))
        slope = sigmoid(x.value, beta)
        return Dual(s, _apply("mul", (x.tangent, expand(slope))))
    return _apply("softplus", (x,), beta=float(beta))


def reduce_sum(x, axis=None, keepdims=False):
    return _apply("sum", (x,), axis=axis, keepdims=keepdims)


def mean(x, axis=None):
    n = value_of(x).size if axis is None else value_of(x).shape[axis]
    return _apply("div", (reduce_sum(x, axis=axis), float(n)))


def concat(xs, axis=-1):
    if any(isinstance(x, Dual) for x in xs):
        duals = [x if isinstance(x, Dual) else Dual(x, np.zeros(value_of(x).shape[:-1] + (3, value_of(x).shape[-1])))
                 for x in xs]
        return Dual(_apply("concat", tuple(d.value for d in duals), axis=-1),
                    _apply("concat", tuple(d.tangent for d in duals), axis=-1))
    ndim = value_of(xs[0]).ndim
    return _apply("concat", tuple(xs), axis=axis % ndim)


def dot(a, b):
    """Inner product over the last axis, keeping it as size 1."""
    if isinstance(a, Dual) or isinstance(b, Dual):
        raise TypeError("use Dual arithmetic for dual inner products")
    return _apply("dot", (a, b))


def norm(x, eps=1e-12):
    """Euclidean norm over the last axis (kept as size 1).

    Its derivative is taken as zero where the norm is ``<= eps``.
    For a :class:`Dual` the tangent is ``J^T u`` with ``u`` the guarded unit
    direction of the value.
    """
    if isinstance(x, Dual):
        n = _apply("norm", (x.value,), eps=float(eps))
        u = normalize(x.value, eps)
        tangent = _apply("dot", (x.tangent, expand(u)))
        return Dual(n, tangent)
    return _apply("norm", (x,), eps=float(eps))


FALLBACK_DIRECTION = (0.0, 0.0, 1.0)


def normalize(x, eps=1e-12, fallback=FALLBACK_DIRECTION):
    """Unit vector along the last axis; ``fallback`` where the norm is ``<= eps``."""
    if isinstance(x, Dual):
        raise TypeError("normalize() of a Dual is not needed by the field and is unsupported")
    return _apply("normalize", (x,), eps=float(eps), fallback=tuple(fallback))


def input_jacobian(f, x):
    """Jacobian ``J[..., i, j] = dF_i / dx_j`` of ``f`` at points ``x`` via one dual pass."""
    out = f(Dual.seed(x))
    return np.swapaxes(value_of(out.tangent), -1, -2)


def grad_params(loss, params):
    """Flat gradient of a taped scalar with respect to the parameter leaves.

    Parameters the loss does not depend on get zeros.  Because tangents are
    taped like any other value, this also differentiates losses that contain
    input gradients of the field.
    """
    if not isinstance(loss, Var):
        raise TypeError("loss must be a taped Var")
    grads = loss.tape.gradient(loss, list(params))
    if not grads:
        return np.zeros(0)
    return np.concatenate([g.ravel() for g in grads])


grad_params_of_input_grad = grad_params
