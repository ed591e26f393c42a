"""Dense float tensors with tape-based reverse-mode autodiff.

Every differentiable operation appends a node to the active :class:`Tape`.
A node remembers its parent tensors and a closure that maps the gradient of
its output to gradients of its parents.  :func:`backward` walks the tape in
decreasing id order, so the tape order is also a valid topological order.

Data is stored in row-major NumPy arrays.  The working precision is float32;
:func:`precision` temporarily switches it (gradient checks run in float64 so
finite differences are not swamped by rounding).
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import (
    AxisOutOfRange,
    DetachedTensor,
    IncompatibleShapes,
    InvalidShape,
    NonScalarLoss,
    ShapeMismatch,
)

__all__ = [
    "Tensor", "Tape", "Rng", "precision", "no_grad", "get_dtype",
    "tensor_full", "zeros", "ones", "ones_like", "randn",
    "ew_binary", "add", "sub", "mul", "div", "matmul", "reduce",
    "backward", "grad_check",
]

_dtype = np.float32
_grad_enabled = True


def get_dtype():
    return _dtype


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily change the dtype new tensors are stored in."""
    global _dtype
    prev, _dtype = _dtype, np.dtype(dtype).type
    try:
        yield
    finally:
        _dtype = prev


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording (inference, parameter updates)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Rng:
    """Seedable generator backed by the counter-based Philox4x64 bit generator.

    Identical seeds give bit-identical streams on every platform NumPy supports.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    @property
    def state(self) -> dict:
        return self._gen.bit_generator.state

    def normal(self, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        out = self._gen.standard_normal(tuple(shape), dtype=np.float32)
        if std != 1.0 or mean != 0.0:
            out = out * np.float32(std) + np.float32(mean)
        return out.astype(_dtype, copy=False)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=tuple(shape)).astype(_dtype)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def spawn(self, key: int) -> "Rng":
        """Derive an independent child stream, deterministic in (seed, key)."""
        return Rng((self.seed * 0x9E3779B97F4A7C15 + key + 1) & 0xFFFFFFFFFFFFFFFF)


@dataclass
class _Node:
    inputs: tuple
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Append-only record of differentiable operations.

    Use as a context manager to make it the active tape; otherwise operations
    land on a process-wide default tape.
    """

    nodes: list = field(default_factory=list)

    @property
    def next_id(self) -> int:
        return len(self.nodes)

    def record(self, inputs: tuple, backward_fn) -> int:
        self.nodes.append(_Node(inputs, backward_fn))
        return len(self.nodes) - 1

    def reset(self) -> None:
        self.nodes.clear()

    def __enter__(self) -> "Tape":
        _tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tapes.remove(self)


_tapes: list[Tape] = [Tape()]


def active_tape() -> Tape:
    return _tapes[-1]


def _check_shape(shape) -> tuple:
    shape = tuple(int(d) for d in shape)
    if not shape or any(d < 1 for d in shape):
        raise InvalidShape(f"invalid shape {shape}: need a non-empty list of dims >= 1")
    return shape


class Tensor:
    """An n-dimensional float array that can take part in autodiff."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=_dtype)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        _check_shape(arr.shape)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node_id: int | None = None
        self._tape: Tape | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=_dtype)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t.node_id = None
        t._tape = None
        return t

    # basic properties --------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.node_id is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatch(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # operators ---------------------------------------------------------
    def __add__(self, other):
        return ew_binary("add", self, other)

    def __radd__(self, other):
        return ew_binary("add", _as_tensor(other), self)

    def __sub__(self, other):
        return ew_binary("sub", self, other)

    def __rsub__(self, other):
        return ew_binary("sub", _as_tensor(other), self)

    def __mul__(self, other):
        return ew_binary("mul", self, other)

    def __rmul__(self, other):
        return ew_binary("mul", _as_tensor(other), self)

    def __truediv__(self, other):
        return ew_binary("div", self, other)

    def __rtruediv__(self, other):
        return ew_binary("div", _as_tensor(other), self)

    def __neg__(self):
        return _unary(self, -self.data, lambda g: (-g,))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axes=None, keepdims: bool = False):
        return reduce("sum", self, axes, keepdims)

    def mean(self, axes=None, keepdims: bool = False):
        return reduce("mean", self, axes, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = shape[0]
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)

    def log(self):
        return log(self)

    def exp(self):
        return exp(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    """Wrap ``data`` and record it on the active tape if any parent needs grad.

    ``backward_fn`` receives the output gradient and returns one gradient (or
    None) per parent, each with that parent's shape.
    """
    out = Tensor._wrap(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        tape = active_tape()
        out.requires_grad = True
        out.node_id = tape.record(parents, backward_fn)
        out._tape = tape
    return out


def _unary(x: Tensor, data, backward_fn) -> Tensor:
    return make_result(data, (x,), backward_fn)


# constructors ----------------------------------------------------------

def tensor_full(shape, value: float) -> Tensor:
    return Tensor._wrap(np.full(_check_shape(shape), value, dtype=_dtype))


def zeros(shape) -> Tensor:
    return tensor_full(shape, 0.0)


def ones(shape) -> Tensor:
    return tensor_full(shape, 1.0)


def ones_like(x: Tensor) -> Tensor:
    return tensor_full(x.shape, 1.0)


def randn(shape, rng: Rng, requires_grad: bool = False) -> Tensor:
    t = Tensor._wrap(rng.normal(_check_shape(shape)))
    t.requires_grad = requires_grad
    return t


# elementwise -------------------------------------------------------------

def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    try:
        out = np.broadcast_shapes(a, b)
    except ValueError:
        out = None
    if out not in (a, b):
        raise IncompatibleShapes(f"cannot combine shapes {a} and {b}")
    return out


def ew_binary(op: str, a, b) -> Tensor:
    """Elementwise add/sub/mul/div with trailing-axis broadcasting of size-1 axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    x, y = a.data, b.data
    sa, sb = a.shape, b.shape
    if op == "add":
        data = x + y
        bw = lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    elif op == "sub":
        data = x - y
        bw = lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))
    elif op == "mul":
        data = x * y
        bw = lambda g: (_unbroadcast(g * y, sa), _unbroadcast(g * x, sb))
    elif op == "div":
        with np.errstate(divide="ignore", invalid="ignore"):
            data = x / y

        def bw(g):
            with np.errstate(divide="ignore", invalid="ignore"):
                return (_unbroadcast(g / y, sa), _unbroadcast(-g * x / (y * y), sb))
    else:
        raise ValueError(f"unknown elementwise op {op!r}")
    return make_result(data, (a, b), bw)


def add(a, b):
    return ew_binary("add", a, b)


def sub(a, b):
    return ew_binary("sub", a, b)


def mul(a, b):
    return ew_binary("mul", a, b)


def div(a, b):
    return ew_binary("div", a, b)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise IncompatibleShapes(f"matmul of {a.shape} and {b.shape}")
    x, y = a.data, b.data
    return make_result(x @ y, (a, b), lambda g: (g @ y.T, x.T @ g))


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _unary(x, x.data.transpose(axes), lambda g: (g.transpose(inv),))


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(d) for d in shape)
    data = x.data.reshape(shape)
    _check_shape(data.shape)
    src = x.shape
    return _unary(x, data, lambda g: (g.reshape(src),))


def _norm_axes(axes, ndim: int) -> tuple:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise AxisOutOfRange(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def reduce(op: str, x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    """Sum or mean over ``axes`` (all axes when None).

    Reducing every axis without ``keepdims`` yields shape ``(1,)``.
    """
    ax = _norm_axes(axes, x.ndim)
    count = int(np.prod([x.shape[i] for i in ax])) if ax else 1
    if op == "sum":
        data = x.data.sum(axis=ax, keepdims=True)
        scale = 1.0
    elif op == "mean":
        data = x.data.mean(axis=ax, keepdims=True)
        scale = 1.0 / count
    else:
        raise ValueError(f"unknown reduction {op!r}")
    kept = data.shape
    if not keepdims:
        data = data.reshape([d for i, d in enumerate(x.shape) if i not in ax] or [1])
    src = x.shape

    def bw(g):
        g = g.reshape(kept)
        if scale != 1.0:
            g = g * _dtype(scale)
        return (np.broadcast_to(g, src).copy(),)

    return make_result(data, (x,), bw)


# pointwise nonlinearities --------------------------------------------------

def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _unary(x, y, lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(xd)
    return _unary(x, y, lambda g: (g / xd,))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    xd = x.data
    mask = (xd >= lo) & (xd <= hi)
    return _unary(x, np.clip(xd, lo, hi), lambda g: (g * mask,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _unary(x, np.where(mask, x.data, 0).astype(_dtype), lambda g: (g * mask,))


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    mask = x.data > 0
    slope = np.where(mask, 1.0, alpha).astype(_dtype)
    return _unary(x, x.data * slope, lambda g: (g * slope,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _unary(x, y, lambda g: (g * (1 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(xd))
    y = np.where(xd >= 0, 1 / (1 + e), e / (1 + e)).astype(_dtype)
    return _unary(x, y, lambda g: (g * y * (1 - y),))


# differentiation -------------------------------------------------------------

def backward(tape_or_loss, loss: Tensor | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Call as ``backward(loss)`` or ``backward(tape, loss)``.  The tape is not
    consumed: a second call adds the same gradients again.
    """
    if loss is None:
        tape, loss = None, tape_or_loss
    else:
        tape = tape_or_loss
    if loss.size != 1:
        raise NonScalarLoss(f"loss must hold a single element, got shape {loss.shape}")
    seed = np.ones(loss.shape, dtype=loss.data.dtype)
    if loss.node_id is None:
        if not loss.requires_grad:
            raise DetachedTensor("loss is not connected to any tensor that requires grad")
        _accumulate(loss, seed)
        return
    if tape is None:
        tape = loss._tape
    elif loss._tape is not tape:
        raise DetachedTensor("loss was not recorded on the given tape")

    grads: dict[int, np.ndarray] = {loss.node_id: seed}
    nodes = tape.nodes
    for nid in range(loss.node_id, -1, -1):
        g = grads.pop(nid, None)
        if g is None:
            continue
        node = nodes[nid]
        for parent, pg in zip(node.inputs, node.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.node_id is None:
                _accumulate(parent, pg)
            elif parent._tape is tape:
                prev = grads.get(parent.node_id)
                grads[parent.node_id] = pg if prev is None else prev + pg
            # non-leaf recorded on another tape: out of scope for this pass


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=t.data.dtype).reshape(t.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-3,
               reference_dtype=np.float64) -> float:
    """Largest relative disagreement between autodiff and central differences.

    The error per element is ``|a - n| / max(1e-6, |a| + |n|)``.  The analytic
    gradient uses the working precision; the difference quotient is evaluated
    in ``reference_dtype`` (pass None to keep the working precision) so that
    rounding of ``f`` does not swamp the comparison.
    """
    x0 = np.array(x.data, dtype=_dtype)
    probe = Tensor(x0, requires_grad=True)
    with Tape() as tape:
        backward(tape, f(probe))
    analytic = np.zeros(x0.shape) if probe.grad is None else probe.grad.astype(np.float64)

    ref = precision(reference_dtype) if reference_dtype is not None else contextlib.nullcontext()
    numeric = np.empty(x0.size)
    with no_grad(), ref:
        xr = np.array(x0, dtype=_dtype)
        flat = xr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(flat[i])
            fp = float(np.sum(f(Tensor(xr)).data, dtype=np.float64))
            flat[i] = orig - eps
            lo = float(flat[i])
            fm = float(np.sum(f(Tensor(xr)).data, dtype=np.float64))
            flat[i] = orig
            # divide by the step actually taken after rounding to the dtype
            numeric[i] = (fp - fm) / (hi - lo)
    a = analytic.reshape(-1)
    err = np.abs(a - numeric) / np.maximum(1e-6, np.abs(a) + np.abs(numeric))
    return float(err.max()) if err.size else 0.0
