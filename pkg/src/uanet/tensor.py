"""Dense tensor with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array. Every differentiable operation
returns a new tensor that remembers its parents and a closure computing
the vector-Jacobian product. :meth:`Tensor.backward` linearizes the graph
into a :class:`Tape` (reverse topological order) and sweeps it once.

A graph can be swept only once: the closures are released after the sweep
and a second ``backward`` on the same root raises :class:`GraphError`.
Leaf gradients accumulate across separate graphs until the caller resets
them with :meth:`Tensor.zero_grad`.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPES = {32: np.float32, 64: np.float64}

_default_dtype = np.float64
_debug = False


class ShapeError(ValueError):
    """Operand shapes are incompatible with an operation."""


class GraphError(RuntimeError):
    """Misuse of the autodiff graph (non-scalar root, double backward)."""


def set_default_dtype(bits: int) -> None:
    global _default_dtype
    if bits not in DTYPES:
        raise ValueError(f"bits must be 32 or 64, got {bits}")
    _default_dtype = DTYPES[bits]


def get_default_dtype():
    return _default_dtype


@contextlib.contextmanager
def default_dtype(bits: int):
    previous = _default_dtype
    set_default_dtype(bits)
    try:
        yield
    finally:
        globals()["_default_dtype"] = previous


@contextlib.contextmanager
def debug_mode(enabled: bool = True):
    """Check every forward result for NaN while active."""
    global _debug
    previous = _debug
    _debug = enabled
    try:
        yield
    finally:
        _debug = previous


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_swept")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            keep = isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64)
            dtype = data.dtype if keep else _default_dtype
        self.data = np.asarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = "leaf"
        self._swept = False

    # ------------------------------------------------------------------
    # construction helpers

    @classmethod
    def _make(cls, data: np.ndarray, parents: Sequence["Tensor"], op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = tuple(parents) if out.requires_grad else ()
        out._backward = None
        out._op = op
        out._swept = False
        if _debug and np.isnan(data).any() and all(np.isfinite(p.data).all() for p in parents):
            raise FloatingPointError(f"NaN produced by {op}")
        return out

    @staticmethod
    def zeros(shape, requires_grad=False, dtype=None) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=dtype or _default_dtype), requires_grad)

    @staticmethod
    def ones(shape, requires_grad=False, dtype=None) -> "Tensor":
        return Tensor(np.ones(shape, dtype=dtype or _default_dtype), requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        """Stop-gradient: same values, no upstream flow."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, op={self._op}{flag})"

    def _lift(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    # ------------------------------------------------------------------
    # elementwise arithmetic (numpy broadcasting)

    def __add__(self, other):
        other = self._lift(other)
        out = Tensor._make(self.data + other.data, (self, other), "add")

        def backward(g):
            if self.requires_grad:
                _accumulate(self, _unbroadcast(g, self.shape))
            if other.requires_grad:
                _accumulate(other, _unbroadcast(g, other.shape))

        out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor._make(-self.data, (self,), "neg")
        out._backward = lambda g: _accumulate(self, -g)
        return out

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __mul__(self, other):
        other = self._lift(other)
        out = Tensor._make(self.data * other.data, (self, other), "mul")

        def backward(g):
            if self.requires_grad:
                _accumulate(self, _unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                _accumulate(other, _unbroadcast(g * self.data, other.shape))

        out._backward = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return self * (1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    # ------------------------------------------------------------------
    # reductions

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = Tensor._make(np.asarray(self.data.sum(axis=axis, keepdims=keepdims)), (self,), "sum")

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(self, np.broadcast_to(g, self.shape))

        out._backward = backward
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # ------------------------------------------------------------------
    # shape ops

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        try:
            data = self.data.reshape(shape)
        except ValueError:
            raise ShapeError(f"cannot reshape {self.shape} into {shape}") from None
        out = Tensor._make(data, (self,), "reshape")
        out._backward = lambda g: _accumulate(self, g.reshape(self.shape))
        return out

    def transpose2d(self) -> "Tensor":
        """Swap the last two axes."""
        if self.ndim < 2:
            raise ShapeError(f"transpose2d needs at least 2 dims, got {self.shape}")
        out = Tensor._make(np.swapaxes(self.data, -1, -2), (self,), "transpose")
        out._backward = lambda g: _accumulate(self, np.swapaxes(g, -1, -2))
        return out

    @property
    def T(self) -> "Tensor":
        return self.transpose2d()

    # ------------------------------------------------------------------
    # autodiff

    def backward(self) -> "Tape":
        if self.size != 1:
            raise GraphError(f"backward needs a scalar root, got shape {self.shape}")
        tape = Tape.from_root(self)
        tape.sweep(self)
        return tape


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = np.asarray(g, dtype=t.dtype)
    if t.grad is None:
        t.grad = np.array(g, copy=True).reshape(t.shape)
    else:
        t.grad = t.grad + g


class Tape:
    """Operations reachable from a root, producers before consumers."""

    def __init__(self, nodes: list):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        order: list = []
        seen: set = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            if node._swept:
                raise GraphError(f"graph through {node._op} was already swept")
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def sweep(self, root: Tensor) -> None:
        # intermediate grads start fresh; leaves keep what the caller left there
        for node in self.nodes:
            if node._parents:
                node.grad = None
        root.grad = np.ones(root.shape, dtype=root.dtype)
        for node in reversed(self.nodes):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if node._parents:
                node._backward = None
                node._swept = True


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def parameter(data, dtype=None) -> Tensor:
    return Tensor(np.array(data, dtype=dtype or _default_dtype), requires_grad=True)


# ----------------------------------------------------------------------
# matrix product


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes must match."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = Tensor._make(np.matmul(a.data, b.data), (a, b), "matmul")

    def backward(g):
        if a.requires_grad:
            _accumulate(a, np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            _accumulate(b, np.matmul(np.swapaxes(a.data, -1, -2), g))

    out._backward = backward
    return out


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    ndim = tensors[0].ndim
    axis = _norm_axis(axis, ndim)
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[d] != tensors[0].shape[d] for d in range(ndim) if d != axis
        ):
            raise ShapeError(
                f"concat along axis {axis}: {tensors[0].shape} vs {t.shape}"
            )
    out = Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                index = [slice(None)] * ndim
                index[axis] = slice(lo, hi)
                _accumulate(t, g[tuple(index)])

    out._backward = backward
    return out


def split(t: Tensor, axis: int = 0, sections: int | None = None) -> list:
    """Split into equal pieces along ``axis`` (default: unit slices)."""
    axis = _norm_axis(axis, t.ndim)
    size = t.shape[axis]
    sections = size if sections is None else sections
    if sections < 1 or size % sections:
        raise ShapeError(f"cannot split extent {size} into {sections} equal parts")
    step = size // sections
    pieces = []
    for k in range(sections):
        index = [slice(None)] * t.ndim
        index[axis] = slice(k * step, (k + 1) * step)
        pieces.append(_slice(t, tuple(index)))
    return pieces


def _slice(t: Tensor, index: tuple) -> Tensor:
    out = Tensor._make(t.data[index], (t,), "slice")

    def backward(g):
        full = np.zeros(t.shape, dtype=t.dtype)
        full[index] = g
        _accumulate(t, full)

    out._backward = backward
    return out


def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for {ndim}-d tensor")
    return axis % ndim
