"""Dense float64 tensors with reverse-mode automatic differentiation.

Every primitive stores a closure mapping the output gradient to one gradient
per parent.  ``backward`` orders the recorded graph into a :class:`Tape`
(a topological order) and replays it in reverse, so each node is visited
exactly once.

Broadcasting follows numpy semantics; gradients flowing into a broadcast
operand are summed back to its shape.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, ContractError, DimensionError

DTYPE = np.float64

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._backward = _backward

    # --- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return len(self.data)

    # --- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    # --- method sugar ----------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def swapaxes(self, a, b):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)


class Parameter(Tensor):
    """A named trainable leaf with a gradient accumulator of its own shape."""

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, dtype=DTYPE), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


# --- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    out = a.data / b.data

    def bw(g):
        return unbroadcast(g / b.data, a.shape), unbroadcast(-g * out / b.data, b.shape)

    return _node(out, (a, b), bw)


def power(a, exponent: float) -> Tensor:
    if isinstance(exponent, Tensor):
        raise ContractError("power supports scalar exponents only")
    a = as_tensor(a)

    def bw(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return _node(a.data**exponent, (a,), bw)


def sqrt(a) -> Tensor:
    return power(a, 0.5)


# --- matrix product -----------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}") from None

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _node(out, (a, b), bw)


# --- activations ----------------------------------------------------------------

def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def elu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    neg_part = np.expm1(np.minimum(a.data, 0.0))
    out = np.where(pos, a.data, neg_part)
    return _node(out, (a,), lambda g: (g * np.where(pos, 1.0, neg_part + 1.0),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = expit(a.data)
    out = a.data * s
    return _node(out, (a,), lambda g: (g * (s + a.data * s * (1.0 - s)),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)
    return _node(out, (a,), lambda g: (g * expit(a.data),))


ACTIVATIONS = {
    "tanh": tanh,
    "elu": elu,
    "relu": relu,
    "exp": exp,
    "sigmoid": sigmoid,
    "silu": silu,
    "softplus": softplus,
}


def apply_activation(x, kind: str) -> Tensor:
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ConfigurationError(
            f"unknown activation {kind!r}; expected one of {sorted(ACTIVATIONS)}"
        ) from None
    return fn(as_tensor(x))


# --- reductions and shape ops ---------------------------------------------------

def _check_axis(a: Tensor, axis):
    if axis is None:
        return None
    axes = axis if isinstance(axis, tuple) else (axis,)
    for ax in axes:
        if not -a.ndim <= ax < a.ndim:
            raise DimensionError(f"axis {ax} out of range for shape {a.shape}")
    return tuple(ax % a.ndim for ax in axes)


def reduce_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _check_axis(a, axis)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), bw)


def reduce_mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _check_axis(a, axis)
    count = a.size if axes is None else int(np.prod([a.shape[i] for i in axes]))
    return reduce_sum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {a.shape} to {tuple(shape)}") from None
    return _node(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def getitem(a, index) -> Tensor:
    """Basic slicing and integer-array gathering; gradients scatter-add back."""
    a = as_tensor(a)
    if isinstance(index, Tensor):
        index = index.data.astype(np.intp)
    out = a.data[index]

    basic = _is_basic_index(index)

    def bw(g):
        grad = np.zeros_like(a.data)
        if basic:
            grad[index] += g
        else:
            np.add.at(grad, index, g)
        return (grad,)

    return _node(out, (a,), bw)


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(p is None or p is Ellipsis or isinstance(p, (slice, int, np.integer)) for p in parts)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tensors, bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"stack: {exc}") from None

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _node(out, tensors, bw)


def scatter_add(src, index, size: int) -> Tensor:
    """Sum rows of ``src`` into ``size`` buckets along axis 0 by ``index``."""
    src = as_tensor(src)
    index = np.asarray(index, dtype=np.intp)
    if index.shape != src.shape[:1]:
        raise DimensionError(f"scatter_add index {index.shape} vs source {src.shape}")
    out = np.zeros((size,) + src.shape[1:], dtype=DTYPE)
    np.add.at(out, index, src.data)
    return _node(out, (src,), lambda g: (g[index],))


# --- composites -----------------------------------------------------------------

def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shift = a.data.max(axis=axis, keepdims=True)
    e = exp(a - shift)
    return e / reduce_sum(e, axis=axis, keepdims=True)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    mu = reduce_mean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = reduce_mean(centered * centered, axis=-1, keepdims=True)
    return centered / sqrt(var + eps) * gamma + beta


# --- linear recurrence --------------------------------------------------------------

def _scan_sequential(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    h = np.empty_like(b)
    h[0] = b[0]
    for t in range(1, len(b)):
        h[t] = a[t] * h[t - 1] + b[t]
    return h


def _scan_prefix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Hillis-Steele over the associative pair (a, b) o (a', b') = (a a', a' b + b')
    coef, h = a.copy(), b.copy()
    offset = 1
    while offset < len(h):
        h[offset:] = coef[offset:] * h[:-offset] + h[offset:]
        coef[offset:] = coef[offset:] * coef[:-offset]
        offset *= 2
    return h


_SCANS = {"sequential": _scan_sequential, "prefix": _scan_prefix}


def linear_recurrence(a, b, axis: int = 0, method: str = "sequential") -> Tensor:
    """All states of ``h_t = a_t * h_{t-1} + b_t`` with ``h_{-1} = 0``.

    ``a`` and ``b`` share a shape; ``axis`` is the time axis.  Both methods
    are deterministic; ``prefix`` runs in ceil(log2 L) vectorised sweeps.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"linear_recurrence: coefficient {a.shape} vs input {b.shape}")
    try:
        scan = _SCANS[method]
    except KeyError:
        raise ConfigurationError(f"unknown scan method {method!r}") from None
    at = np.moveaxis(a.data, axis, 0)
    bt = np.moveaxis(b.data, axis, 0)
    ht = scan(at, bt)
    out = np.moveaxis(ht, 0, axis)

    def bw(g):
        gt = np.moveaxis(g, axis, 0)
        # adjoint: lam_t = g_t + a_{t+1} lam_{t+1}, run as a reversed scan
        shifted = np.zeros_like(at)
        shifted[:-1] = at[1:]
        lam = scan(shifted[::-1], gt[::-1])[::-1]
        ga = np.zeros_like(at)
        ga[1:] = lam[1:] * ht[:-1]
        return np.moveaxis(ga, 0, axis), np.moveaxis(np.ascontiguousarray(lam), 0, axis)

    return _node(out, (a, b), bw)


# --- backward pass ------------------------------------------------------------------

class Tape:
    """Topologically ordered record of the nodes reachable from a root."""

    def __init__(self, nodes: list):
        self.nodes = nodes

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
        order, seen = [], set()
        stack_ = [(root, False)]
        while stack_:
            node, expanded = stack_.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack_.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack_.append((parent, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)

    def replay(self, root: Tensor, seed: np.ndarray) -> None:
        grads = {id(root): seed}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad = node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg


def backward(loss: Tensor, params: Iterable[Parameter] | None = None) -> dict:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    Returns a map from Parameter to its accumulated gradient.  When ``params``
    is given, every listed Parameter appears in the map, with zeros for those
    the loss does not reach.
    """
    if loss.data.size != 1 or loss.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.requires_grad:
        Tape.record(loss).replay(loss, np.ones_like(loss.data))
    if params is None:
        return {
            node: node.grad
            for node in Tape.record(loss).nodes
            if isinstance(node, Parameter)
        }
    result = {}
    for p in params:
        if p.grad is None:
            p.zero_grad()
        result[p] = p.grad
    return result


# --- numerical checking ------------------------------------------------------------

def numerical_gradient(fn: Callable[[], Tensor], param: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of the scalar ``fn()`` with respect to ``param``."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    out = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(fn().data)
            flat[i] = orig - step
            lo = float(fn().data)
            flat[i] = orig
            out[i] = (hi - lo) / (2.0 * step)
    return grad


def gradient_errors(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-7) -> np.ndarray:
    """Elementwise relative error; entries within ``floor`` absolutely count as zero."""
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.divide(diff, scale, out=np.zeros_like(diff), where=scale > 0)
    return np.where(diff <= floor, 0.0, rel)


def check_gradients(fn: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5) -> float:
    """Largest relative error between autodiff and finite differences over ``params``."""
    for p in params:
        p.grad = np.zeros_like(p.data)
    backward(fn())
    worst = 0.0
    for p in params:
        numeric = numerical_gradient(fn, p, step)
        worst = max(worst, float(gradient_errors(p.grad, numeric).max(initial=0.0)))
    return worst
