"""Reverse-mode differentiation over dense numpy arrays.

Every operation on a :class:`Tensor` stores its parents together with a
vector-Jacobian product closure. ``backward`` replays that record in reverse
topological order, accumulating gradients into the leaves that asked for them.
Operands that do not require gradients are never recorded, so frozen networks
and constants add no backward work.

Each forward result is checked for NaN/Inf; the first offending operation is
reported by name through :class:`~copvae.errors.NonFiniteError`.
"""

import numpy as np
from scipy.special import expit, log_ndtr as _log_ndtr, ndtri_exp as _ndtri_exp

from copvae.errors import ArityError, NonFiniteError
from copvae.mathcore.special import (
    std_normal_cdf,
    std_normal_logpdf,
    std_normal_pdf,
    std_normal_quantile,
)

CHECK_FINITE = True


class Tensor:
    __slots__ = ("value", "parents", "op", "requires_grad", "grad")
    __array_priority__ = 1000

    def __init__(self, value, requires_grad=False, *, parents=(), op="leaf"):
        self.value = np.asarray(value, dtype=float)
        self.parents = parents
        self.op = op
        self.requires_grad = requires_grad or bool(parents)
        self.grad = None

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    @property
    def T(self):
        return swapaxes(self, -1, -2)

    def __len__(self):
        return len(self.value)

    def numpy(self):
        return self.value

    def backward(self, seed=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every recorded leaf."""
        if seed is None:
            if self.value.size != 1:
                raise ArityError("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.value)
        order = _topological(self)
        pending = {id(self): np.asarray(seed, dtype=float)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if not node.parents:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, vjp in node.parents:
                pg = vjp(g)
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg

    # storage-level operator overloads
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _topological(root):
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
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def value_of(x):
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=float)


def make(value, op, *pairs):
    """Build an op result; ``pairs`` are (operand, vjp) tuples.

    Constant operands are dropped, so custom primitives only need to supply
    vjps, never to check requires_grad themselves.
    """
    value = np.asarray(value, dtype=float)
    if CHECK_FINITE and not np.all(np.isfinite(value)):
        raise NonFiniteError(op)
    parents = tuple(
        (t, vjp) for t, vjp in pairs if isinstance(t, Tensor) and t.requires_grad
    )
    return Tensor(value, parents=parents, op=op)


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ----------------------------------------------------------------- arithmetic

def add(a, b):
    av, bv = value_of(a), value_of(b)
    return make(av + bv, "add",
                (a, lambda g: unbroadcast(g, av.shape)),
                (b, lambda g: unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    return make(av - bv, "sub",
                (a, lambda g: unbroadcast(g, av.shape)),
                (b, lambda g: unbroadcast(-g, bv.shape)))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    return make(av * bv, "mul",
                (a, lambda g: unbroadcast(g * bv, av.shape)),
                (b, lambda g: unbroadcast(g * av, bv.shape)))


def div(a, b):
    av, bv = value_of(a), value_of(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = av / bv
    return make(out, "div",
                (a, lambda g: unbroadcast(g / bv, av.shape)),
                (b, lambda g: unbroadcast(-g * out / bv, bv.shape)))


def neg(a):
    return make(-value_of(a), "neg", (a, lambda g: -g))


def power(a, exponent):
    """Elementwise a ** exponent for a constant real exponent."""
    av = value_of(a)
    p = float(exponent)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = av ** p
    return make(out, "power", (a, lambda g: g * p * av ** (p - 1.0)))


def square(a):
    av = value_of(a)
    return make(av * av, "square", (a, lambda g: 2.0 * g * av))


def matmul(a, b):
    """Batched matrix product of operands with ndim >= 2."""
    av, bv = value_of(a), value_of(b)
    if av.ndim < 2 or bv.ndim < 2:
        raise ArityError("matmul operands must have ndim >= 2; reshape vectors first")
    if av.shape[-1] != bv.shape[-2]:
        raise ArityError(f"matmul shape mismatch {av.shape} @ {bv.shape}")
    return make(av @ bv, "matmul",
                (a, lambda g: unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)),
                (b, lambda g: unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)))


def solve(a, b):
    """x with a @ x = b for batched square ``a`` and ``b`` of shape (..., n, r)."""
    av, bv = value_of(a), value_of(b)
    a_b = np.broadcast_to(av, np.broadcast_shapes(av.shape[:-2], bv.shape[:-2]) + av.shape[-2:])
    x = np.linalg.solve(a_b, bv)

    def grad_b(g):
        return unbroadcast(np.linalg.solve(np.swapaxes(a_b, -1, -2), g), bv.shape)

    def grad_a(g):
        gb = np.linalg.solve(np.swapaxes(a_b, -1, -2), g)
        return unbroadcast(-gb @ np.swapaxes(x, -1, -2), av.shape)

    return make(x, "solve", (a, grad_a), (b, grad_b))


# ----------------------------------------------------------------- reductions

def _expand_like(g, axis, keepdims, shape):
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False):
    av = value_of(a)
    return make(av.sum(axis=axis, keepdims=keepdims), "sum",
                (a, lambda g: _expand_like(g, axis, keepdims, av.shape)))


def mean(a, axis=None, keepdims=False):
    av = value_of(a)
    out = av.mean(axis=axis, keepdims=keepdims)
    count = av.size / max(out.size, 1)
    return make(out, "mean",
                (a, lambda g: _expand_like(g / count, axis, keepdims, av.shape)))


def logsumexp(a, axis=-1, keepdims=False):
    av = value_of(a)
    peak = np.max(av, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    shifted = np.exp(av - peak)
    total = shifted.sum(axis=axis, keepdims=True)
    out = np.log(total) + peak
    soft = shifted / total
    res = out if keepdims else np.squeeze(out, axis=axis)

    def vjp(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        return gk * soft

    return make(res, "logsumexp", (a, vjp))


def softmax(a, axis=-1):
    return exp(a - logsumexp(a, axis=axis, keepdims=True))


# ----------------------------------------------------------------- elementwise

def exp(a):
    av = value_of(a)
    with np.errstate(over="ignore"):
        out = np.exp(av)
    return make(out, "exp", (a, lambda g: g * out))


def expm1(a):
    av = value_of(a)
    out = np.expm1(av)
    return make(out, "expm1", (a, lambda g: g * (out + 1.0)))


def log(a):
    av = value_of(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(av)
    return make(out, "log", (a, lambda g: g / av))


def sqrt(a):
    av = value_of(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(av)
    return make(out, "sqrt", (a, lambda g: 0.5 * g / out))


def tanh(a):
    out = np.tanh(value_of(a))
    return make(out, "tanh", (a, lambda g: g * (1.0 - out * out)))


def sigmoid(a):
    out = expit(value_of(a))
    return make(out, "sigmoid", (a, lambda g: g * out * (1.0 - out)))


def relu(a):
    av = value_of(a)
    return make(np.maximum(av, 0.0), "relu", (a, lambda g: g * (av > 0.0)))


def softplus(a):
    av = value_of(a)
    return make(np.logaddexp(0.0, av), "softplus", (a, lambda g: g * expit(av)))


def sin(a):
    av = value_of(a)
    return make(np.sin(av), "sin", (a, lambda g: g * np.cos(av)))


def cos(a):
    av = value_of(a)
    return make(np.cos(av), "cos", (a, lambda g: -g * np.sin(av)))


def ndtr(a):
    """Standard normal CDF."""
    av = value_of(a)
    return make(std_normal_cdf(av), "ndtr", (a, lambda g: g * std_normal_pdf(av)))


def ndtri(a):
    """Standard normal quantile; raises DomainError outside (0, 1)."""
    av = value_of(a)
    out = np.asarray(std_normal_quantile(av), dtype=float)
    return make(out, "ndtri", (a, lambda g: g * np.exp(-std_normal_logpdf(out))))


def log_ndtr(a):
    """log Phi, accurate far into the lower tail."""
    av = value_of(a)
    out = _log_ndtr(av)
    return make(out, "log_ndtr",
                (a, lambda g: g * np.exp(std_normal_logpdf(av) - out)))


def ndtri_exp(a):
    """Inverse of :func:`log_ndtr`, for log-probabilities below 0."""
    av = value_of(a)
    out = _ndtri_exp(av)
    return make(out, "ndtri_exp",
                (a, lambda g: g * np.exp(av - std_normal_logpdf(out))))


def where(cond, a, b):
    """Select a where ``cond`` holds, b elsewhere; ``cond`` is a constant mask."""
    cond = np.asarray(cond, dtype=bool)
    av, bv = value_of(a), value_of(b)
    return make(np.where(cond, av, bv), "where",
                (a, lambda g: unbroadcast(np.where(cond, g, 0.0), av.shape)),
                (b, lambda g: unbroadcast(np.where(cond, 0.0, g), bv.shape)))


def clip(a, lo=None, hi=None):
    """Clamp into [lo, hi]; gradient is zero where the clamp is active."""
    av = value_of(a)
    out = np.clip(av, lo, hi)
    inside = out == av
    return make(out, "clip", (a, lambda g: g * inside))


# ----------------------------------------------------------------- shaping

def reshape(a, shape):
    av = value_of(a)
    return make(av.reshape(shape), "reshape", (a, lambda g: g.reshape(av.shape)))


def swapaxes(a, ax1, ax2):
    return make(np.swapaxes(value_of(a), ax1, ax2), "swapaxes",
                (a, lambda g: np.swapaxes(g, ax1, ax2)))


def expand_dims(a, axis):
    av = value_of(a)
    return make(np.expand_dims(av, axis), "expand_dims",
                (a, lambda g: g.reshape(av.shape)))


def broadcast_to(a, shape):
    av = value_of(a)
    return make(np.broadcast_to(av, shape), "broadcast_to",
                (a, lambda g: unbroadcast(g, av.shape)))


def getitem(a, index):
    av = value_of(a)

    def vjp(g):
        full = np.zeros_like(av)
        np.add.at(full, index, g)
        return full

    return make(av[index], "getitem", (a, vjp))


def concatenate(items, axis=-1):
    vals = [value_of(t) for t in items]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])
    pairs = []
    for t, lo, hi in zip(items, bounds[:-1], bounds[1:]):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(lo, hi)
        pairs.append((t, lambda g, sl=tuple(sl): g[sl]))
    return make(out, "concatenate", *pairs)


def stack(items, axis=0):
    vals = [value_of(t) for t in items]
    out = np.stack(vals, axis=axis)
    pairs = [(t, lambda g, i=i: np.take(g, i, axis=axis)) for i, t in enumerate(items)]
    return make(out, "stack", *pairs)


# ----------------------------------------------------------------- drivers

def value_and_grad(fn, *params):
    """Evaluate scalar ``fn(*tensors)`` and its gradient w.r.t. every argument.

    Arguments are plain arrays (or nested lists of arrays is not supported:
    pass each array separately). Returns ``(value, [grad_i ...])``.
    """
    leaves = [Tensor(np.array(p, dtype=float), requires_grad=True) for p in params]
    out = fn(*leaves)
    out = as_tensor(out)
    if out.value.size != 1:
        raise ArityError("loss must be scalar")
    if out.requires_grad:
        out.backward()
    grads = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
             for leaf in leaves]
    return float(out.value.reshape(())), grads


def grad(loss, at):
    """Gradient of a scalar ``loss(theta)`` at the parameter vector ``at``."""
    _, (g,) = value_and_grad(loss, at)
    return g


def finite_difference(fn, at, step=1e-5):
    """Central differences of a scalar numpy function; the oracle for ``grad``."""
    at = np.array(at, dtype=float)
    out = np.zeros_like(at)
    flat = at.reshape(-1)
    g = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        h = step * max(1.0, abs(orig))
        flat[i] = orig + h
        up = fn(at)
        flat[i] = orig - h
        down = fn(at)
        flat[i] = orig
        g[i] = (up - down) / (2.0 * h)
    return out


def gradient_error(fn, at, step=1e-5, atol=1e-6):
    """Worst componentwise relative gap between ``grad`` and central differences.

    ``fn`` maps a Tensor to a scalar Tensor. Components smaller than ``atol``
    in both routes are compared absolutely.
    """
    analytic = grad(fn, at)
    numeric = finite_difference(lambda x: float(value_of(fn(Tensor(x)))), at, step)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), atol)
    return float(np.max(np.abs(analytic - numeric) / scale))
