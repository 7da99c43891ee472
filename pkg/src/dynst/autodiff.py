"""Reverse-mode automatic differentiation over numpy arrays.

Tensors are float64 and record the op graph as they are created: each
result keeps its parents and a closure mapping the upstream adjoint to
parent adjoints. Creation order gives a topological order for free, so
``backward`` walks reachable nodes by descending creation index. All
forward results are checked finite; NaN/Inf is treated as an error
state, never a value.

Gradients accumulate into the ``grad`` buffers of leaf tensors with
``requires_grad=True``. Repeated backward calls without ``zero_grad``
keep accumulating.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ContractError, DomainError, NonFiniteError, ShapeError

_counter = itertools.count()
_grad_enabled = True
_allocator_tuned = False


def tune_allocator() -> None:
    """Keep large blocks on the malloc heap so activation buffers get
    reused across steps instead of being mmapped and page-faulted anew.
    Safe to call repeatedly; silently does nothing off glibc."""
    global _allocator_tuned
    if _allocator_tuned:
        return
    _allocator_tuned = True
    try:
        import ctypes

        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
    except Exception:
        pass


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(op: str, arr: np.ndarray) -> None:
    # One allocation-free pass: any NaN/Inf survives the reduction. Sums of
    # legitimate values cannot overflow at the magnitudes this engine sees.
    with np.errstate(invalid="ignore", over="ignore"):
        total = float(np.add.reduce(arr, axis=None)) if arr.size else 0.0
    if not np.isfinite(total):
        if np.all(np.isfinite(arr)):
            return
        raise NonFiniteError(f"{op} produced non-finite values")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_grad_fn", "_order")

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf",
                 parents=(), grad_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        _check_finite(op, self.data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = op
        self._parents = parents
        self._grad_fn = grad_fn
        self._order = next(_counter)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's grad."""
        if self.data.size != 1:
            raise ContractError(f"backward requires a scalar, got shape {self.shape}")
        nodes = []
        seen = set()
        stack = [self]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            nodes.append(node)
            stack.extend(p for p in node._parents if p.requires_grad)
        nodes.sort(key=lambda n: n._order, reverse=True)

        adjoint: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in nodes:
            up = adjoint.pop(id(node), None)
            if up is None:
                continue
            if node._grad_fn is None:
                if node.requires_grad:
                    node.grad = up.copy() if node.grad is None else node.grad + up
                continue
            for parent, contrib in zip(node._parents, node._grad_fn(up)):
                if contrib is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + contrib
                else:
                    adjoint[key] = contrib

    # --- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(ensure_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(ensure_tensor(other), mul(self, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def ensure_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(op, data, parents, grad_fn):
    track = _grad_enabled and any(p.requires_grad for p in parents)
    if track:
        return Tensor(data, requires_grad=True, op=op, parents=tuple(parents), grad_fn=grad_fn)
    return Tensor(data, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# --- elementwise and structural ops -------------------------------------


def add(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.shape, b.shape) from None

    def grad_fn(up):
        return _unbroadcast(up, a.shape), _unbroadcast(up, b.shape)

    return _make("add", out, (a, b), grad_fn)


def mul(a, b) -> Tensor:
    a, b = ensure_tensor(a), ensure_tensor(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError("mul", a.shape, b.shape) from None

    def grad_fn(up):
        return _unbroadcast(up * b.data, a.shape), _unbroadcast(up * a.data, b.shape)

    return _make("mul", out, (a, b), grad_fn)


def matmul(a, b) -> Tensor:
    """Matrix product with broadcasting over leading (batch) axes."""
    a, b = ensure_tensor(a), ensure_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)

    if b.ndim == 2 and a.ndim > 2:
        # collapse leading axes into one plain GEMM instead of a stack
        k, n = b.shape
        a2 = a.data.reshape(-1, k)
        out = (a2 @ b.data).reshape(*a.shape[:-1], n)

        def grad_fn(up):
            up2 = up.reshape(-1, n)
            ga = (up2 @ b.data.T).reshape(a.shape)
            gb = a2.T @ up2
            return ga, gb

        return _make("matmul", out, (a, b), grad_fn)

    try:
        out = a.data @ b.data
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def grad_fn(up):
        ga = up @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ up
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make("matmul", out, (a, b), grad_fn)


def linear(x, w, b) -> Tensor:
    """x @ w + b with the bias broadcast over leading axes."""
    return add(matmul(x, w), b)


def sigmoid(x) -> Tensor:
    x = ensure_tensor(x)
    out = expit(x.data)

    def grad_fn(up):
        return (up * out * (1.0 - out),)

    return _make("sigmoid", out, (x,), grad_fn)


def log(x) -> Tensor:
    x = ensure_tensor(x)
    if np.any(x.data <= 0.0):
        raise DomainError("log requires strictly positive inputs")
    out = np.log(x.data)

    def grad_fn(up):
        return (up / x.data,)

    return _make("log", out, (x,), grad_fn)


def exp(x) -> Tensor:
    x = ensure_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    _check_finite("exp", out)

    def grad_fn(up):
        return (up * out,)

    return _make("exp", out, (x,), grad_fn)


def absolute(x) -> Tensor:
    """|x| with subgradient 0 at the kink."""
    x = ensure_tensor(x)

    def grad_fn(up):
        return (up * np.sign(x.data),)

    return _make("abs", np.abs(x.data), (x,), grad_fn)


def max_with_zero(x) -> Tensor:
    """Hinge max(x, 0); subgradient 0 at x == 0."""
    x = ensure_tensor(x)

    def grad_fn(up):
        return (up * (x.data > 0.0),)

    return _make("max_with_zero", np.maximum(x.data, 0.0), (x,), grad_fn)


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp into [lo, hi]; gradient passes only strictly inside the band."""
    x = ensure_tensor(x)
    out = np.clip(x.data, lo, hi)

    def grad_fn(up):
        return (up * ((x.data > lo) & (x.data < hi)),)

    return _make("clip", out, (x,), grad_fn)


def softmax(x, axis: int = -1) -> Tensor:
    x = ensure_tensor(x)
    out = x.data - x.data.max(axis=axis, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=axis, keepdims=True)

    def grad_fn(up):
        if axis in (-1, out.ndim - 1):
            inner = np.einsum("...i,...i->...", up, out)[..., None]
        else:
            inner = np.sum(up * out, axis=axis, keepdims=True)
        g = up - inner
        g *= out
        return (g,)

    return _make("softmax", out, (x,), grad_fn)


def layer_norm(x, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean, unit variance along ``axis`` (no affine part)."""
    x = ensure_tensor(x)
    mean = x.data.mean(axis=axis, keepdims=True)
    var = x.data.var(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = (x.data - mean) * inv

    def grad_fn(up):
        m1 = up.mean(axis=axis, keepdims=True)
        m2 = (up * out).mean(axis=axis, keepdims=True)
        return (inv * (up - m1 - out * m2),)

    return _make("layer_norm", out, (x,), grad_fn)


def dropout(x, p: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero a fraction p and scale survivors by 1/(1-p).

    Identity in eval mode. ``rng`` is required in train mode with p > 0.
    """
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout p must lie in [0, 1), got {p}")
    x = ensure_tensor(x)
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in train mode needs an rng")
    keep = rng.random(x.shape) >= p
    scale = 1.0 / (1.0 - p)
    out = x.data * keep * scale

    def grad_fn(up):
        return (up * keep * scale,)

    return _make("dropout", out, (x,), grad_fn)


def masked_fill(x, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is True by ``value``; no gradient there."""
    x = ensure_tensor(x)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    out = np.where(mask, value, x.data)
    keep = ~mask

    def grad_fn(up):
        return (up * keep,)

    return _make("masked_fill", out, (x,), grad_fn)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [ensure_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(t.shape for t in tensors)) from None
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(up):
        return tuple(np.split(up, splits, axis=axis))

    return _make("concat", out, tuple(tensors), grad_fn)


def slice_(x, key) -> Tensor:
    """Basic indexing (ints and slices); gradient scatters back into zeros."""
    x = ensure_tensor(x)
    out = x.data[key]

    def grad_fn(up):
        full = np.zeros_like(x.data)
        full[key] = up
        return (full,)

    return _make("slice", out, (x,), grad_fn)


def reshape(x, shape) -> Tensor:
    x = ensure_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, tuple(np.atleast_1d(shape))) from None

    def grad_fn(up):
        return (up.reshape(x.shape),)

    return _make("reshape", out, (x,), grad_fn)


def transpose(x, axes) -> Tensor:
    x = ensure_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def grad_fn(up):
        return (up.transpose(inverse),)

    return _make("transpose", x.data.transpose(axes), (x,), grad_fn)


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = ensure_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(up):
        g = np.asarray(up)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make("sum", out, (x,), grad_fn)


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = ensure_tensor(x)
    count = x.data.size if axis is None else np.prod(
        [x.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
    )
    out = x.data.mean(axis=axis, keepdims=keepdims)

    def grad_fn(up):
        g = np.asarray(up) / count
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make("mean", out, (x,), grad_fn)


# --- Adam with decoupled weight decay ------------------------------------


@dataclass
class AdamState:
    """Moment buffers and step counter for Adam with decoupled weight decay."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update; weight decay applied decoupled.

    Every parameter must carry a populated grad. Moment buffers are
    created lazily on the first step.
    """
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"parameter {name!r} has no gradient")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
        v = state.v.get(name)
        if v is None:
            v = state.v[name] = np.zeros_like(p.data)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if state.weight_decay != 0.0:
            p.data *= 1.0 - state.lr * state.weight_decay


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.zero_grad()
