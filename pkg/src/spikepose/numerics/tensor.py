"""Dense tensors, parameters and the reverse-mode tape.

Every differentiable op records one node on the innermost active :class:`Tape`
when at least one of its inputs requires a gradient.  ``Tape.backward`` replays
the recorded adjoints in reverse order and deposits gradients on the leaf
tensors (normally :class:`Parameter` objects) that took part in the forward
pass.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

# reductions at or above this many elements accumulate in float64
LARGE_REDUCTION = 4096


class NumericsError(Exception):
    """Base class for errors raised by the tensor substrate."""


class DimensionError(NumericsError, ValueError):
    pass


class PreconditionError(NumericsError, ValueError):
    pass


class ContractError(NumericsError, ValueError):
    """A tensor violated a dtype contract (e.g. non-binary spikes)."""


class NumericError(NumericsError, FloatingPointError):
    pass


class TapeStateError(NumericsError, RuntimeError):
    pass


_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


def active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """An n-dimensional real array, optionally flagged as binary.

    ``binary=True`` asserts that every entry is exactly 0 or 1.  The flag is a
    contract checked at construction; arithmetic on binary tensors yields
    ordinary real tensors.
    """

    __array_priority__ = 100

    def __init__(self, data, binary: bool = False, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        if arr.ndim == 0:
            arr = arr.reshape(())
        if binary and not _is_binary(arr):
            raise ContractError("binary tensor holds values outside {0, 1}")
        self.data = arr
        self.binary = binary
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    # -- introspection -------------------------------------------------
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
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, binary=self.binary)

    def __repr__(self) -> str:
        kind = "binary" if self.binary else str(self.data.dtype)
        return f"Tensor(shape={self.shape}, dtype={kind}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        from .functional import matmul

        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, axes)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sin(self):
        return sin(self)

    def cos(self):
        return cos(self)

    def sqrt(self):
        return sqrt(self)

    def abs(self):
        return absolute(self)


class Parameter(Tensor):
    """A named, trainable leaf tensor with a same-shaped gradient buffer."""

    def __init__(self, data, name: str = "", dtype=np.float32):
        super().__init__(np.array(data, dtype=dtype), requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)

    @property
    def value(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


class Tape:
    """Ordered record of the differentiable ops executed inside ``with tape:``."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple, Callable]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, parents: Sequence, adjoint: Callable) -> None:
        if self._consumed:
            raise TapeStateError("tape was already replayed; call reset() before recording")
        self.nodes.append((out, tuple(parents), adjoint))

    def reset(self) -> None:
        self.nodes.clear()
        self._consumed = False

    def backward(self, loss: Tensor) -> None:
        """Populate ``.grad`` of every leaf that contributed to ``loss``.

        Parameter gradients accumulate (``+=``) so several losses may be
        replayed on separate tapes before an optimizer step.
        """
        if self._consumed:
            raise TapeStateError("backward called twice on the same tape without reset()")
        if not isinstance(loss, Tensor) or loss.size != 1:
            raise PreconditionError("loss must be a scalar tensor")
        self._consumed = True
        if not loss.requires_grad:
            return
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        produced = {id(out) for out, _, _ in self.nodes}
        if id(loss) not in produced:
            leaves[id(loss)] = loss
        for out, parents, adjoint in reversed(self.nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, adjoint(g)):
                if pg is None or not isinstance(parent, Tensor) or not parent.requires_grad:
                    continue
                key = id(parent)
                if key not in produced:
                    leaves[key] = parent
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        for key, leaf in leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            g = np.asarray(g, dtype=leaf.data.dtype).reshape(leaf.shape)
            if leaf.grad is None:
                leaf.grad = g.copy()
            else:
                leaf.grad = leaf.grad + g


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


# ---------------------------------------------------------------------------
# helpers


def _is_binary(arr: np.ndarray) -> bool:
    return bool(np.all((arr == 0) | (arr == 1)))


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) or np.isscalar(i) for i in items)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float32 if dtype is None else dtype)
    return Tensor(arr)


def _result_dtype(*arrays) -> np.dtype:
    return np.result_type(*[a.dtype for a in arrays if a.dtype.kind == "f"] or [np.float32])


def make_result(data: np.ndarray, parents: Iterable, adjoint: Callable, binary: bool = False) -> Tensor:
    """Wrap ``data`` as a tensor and register ``adjoint`` on the active tape."""
    parents = tuple(parents)
    out = Tensor(data)
    # ops that claim binary output are responsible for having checked it
    out.binary = binary
    tape = active_tape()
    if tape is not None and any(isinstance(p, Tensor) and p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, parents, adjoint)
    return out


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def sum_array(a: np.ndarray, axis=None, keepdims: bool = False) -> np.ndarray:
    if a.size >= LARGE_REDUCTION:
        return np.sum(a, axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.dtype)
    return np.sum(a, axis=axis, keepdims=keepdims)


def _binary_op(a, b, fwd, adj):
    a = as_tensor(a)
    b = as_tensor(b)
    dtype = _result_dtype(a.data, b.data)
    x, y = a.data.astype(dtype, copy=False), b.data.astype(dtype, copy=False)
    out = fwd(x, y)

    def adjoint(g):
        ga, gb = adj(g, x, y, out)
        return (
            None if ga is None else unbroadcast(ga, x.shape),
            None if gb is None else unbroadcast(gb, y.shape),
        )

    return make_result(out, (a, b), adjoint)


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a, b) -> Tensor:
    return _binary_op(a, b, np.add, lambda g, x, y, o: (g, g))


def sub(a, b) -> Tensor:
    return _binary_op(a, b, np.subtract, lambda g, x, y, o: (g, -g))


def mul(a, b) -> Tensor:
    return _binary_op(a, b, np.multiply, lambda g, x, y, o: (g * y, g * x))


def div(a, b) -> Tensor:
    return _binary_op(a, b, np.divide, lambda g, x, y, o: (g / y, -g * x / (y * y)))


def maximum(a, b) -> Tensor:
    """Elementwise max; ties route the gradient to ``a``."""
    return _binary_op(
        a,
        b,
        np.maximum,
        lambda g, x, y, o: (g * (x >= y), g * (x < y)),
    )


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = x**exponent
    return make_result(out, (a,), lambda g: (g * exponent * x ** (exponent - 1),))


def _unary(a, fwd, deriv) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = fwd(x)
    return make_result(out, (a,), lambda g: (g * deriv(x, out),))


def exp(a) -> Tensor:
    return _unary(a, np.exp, lambda x, o: o)


def log(a) -> Tensor:
    return _unary(a, np.log, lambda x, o: 1.0 / x)


def sin(a) -> Tensor:
    return _unary(a, np.sin, lambda x, o: np.cos(x))


def cos(a) -> Tensor:
    return _unary(a, np.cos, lambda x, o: -np.sin(x))


def sqrt(a) -> Tensor:
    return _unary(a, np.sqrt, lambda x, o: 0.5 / o)


def absolute(a) -> Tensor:
    return _unary(a, np.abs, lambda x, o: np.sign(x))


def sigmoid(a) -> Tensor:
    def fwd(x):
        return 1.0 / (1.0 + np.exp(-x))

    return _unary(a, fwd, lambda x, o: o * (1.0 - o))


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = sum_array(x, axis=axis, keepdims=keepdims)

    def adjoint(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return make_result(np.asarray(out), (a,), adjoint)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[i] for i in axes]))
    return reduce_sum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    out = a.data.reshape(shape)
    return make_result(out, (a,), lambda g: (g.reshape(src),), binary=a.binary)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.transpose(a.data, axes)
    return make_result(out, (a,), lambda g: (np.transpose(g, inverse),), binary=a.binary)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = x[index]

    def adjoint(g):
        full = np.zeros_like(x)
        if _is_basic_index(index):
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return make_result(np.array(out), (a,), adjoint, binary=a.binary)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def adjoint(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return make_result(out, ts, adjoint, binary=all(t.binary for t in ts))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def adjoint(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(ts))
        )

    return make_result(out, ts, adjoint, binary=all(t.binary for t in ts))


def clip_min(a, floor: float) -> Tensor:
    """max(a, floor) with zero gradient on clipped entries."""
    a = as_tensor(a)
    x = a.data
    out = np.maximum(x, floor)
    return make_result(out, (a,), lambda g: (g * (x > floor),))
