"""Tape-based reverse-mode automatic differentiation over dense float64 arrays.

Operations are recorded on the innermost active :class:`Tape` whenever one of
their inputs requires a gradient. Outside a tape the same functions evaluate
eagerly without bookkeeping, which is what inference uses.

    >>> w = Tensor(np.ones((2, 2)), requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = sum_(matmul(w, w))
    >>> tape.gradient(loss, [w])[0]
    array([[4., 4.],
           [4., 4.]])
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Tape",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "transpose",
    "reshape",
    "sum_",
    "mean",
    "sqrt",
    "square",
    "leaky_relu",
    "getitem",
    "stack",
    "concat",
    "squared_norm",
    "value_and_grad",
]

DEFAULT_SLOPE = 0.1


class ShapeError(ValueError):
    """Incompatible operand shapes; ``primitive`` names the failing operation."""

    def __init__(self, primitive: str, message: str):
        super().__init__(f"{primitive}: {message}")
        self.primitive = primitive


class Tensor:
    """A dense float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)


_Backward = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Records primitive applications in execution order.

    Tapes nest; operations go to the innermost active one.
    """

    _stack: list["Tape"] = []

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], _Backward]] = []

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack.pop()

    @classmethod
    def active(cls) -> "Tape | None":
        return cls._stack[-1] if cls._stack else None

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: _Backward) -> None:
        self._records.append((out, inputs, backward))

    def gradient(self, target: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of scalar ``target`` w.r.t. ``sources`` (zeros where unreachable)."""
        if target.data.size != 1:
            raise ShapeError("gradient", f"target must be scalar, got shape {target.shape}")
        adjoints: dict[int, np.ndarray] = {id(target): np.ones_like(target.data)}
        for out, inputs, backward in reversed(self._records):
            g = adjoints.pop(id(out), None)
            if g is None:
                continue
            for x, gx in zip(inputs, backward(g)):
                if gx is None or not x.requires_grad:
                    continue
                key = id(x)
                if key in adjoints:
                    adjoints[key] = adjoints[key] + gx
                else:
                    adjoints[key] = gx
        return [
            adjoints.get(id(s), np.zeros_like(s.data)).reshape(s.shape) for s in sources
        ]


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(data: np.ndarray, inputs: tuple[Tensor, ...], backward: _Backward) -> Tensor:
    needs = any(x.requires_grad for x in inputs)
    out = Tensor(data, requires_grad=needs)
    tape = Tape.active()
    if needs and tape is not None:
        tape.record(out, inputs, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_check(name: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(name, f"cannot broadcast {a.shape} with {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check("add", a, b)
    return _emit(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check("sub", a, b)
    return _emit(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check("mul", a, b)
    return _emit(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        ),
    )


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check("div", a, b)
    out = a.data / b.data
    return _emit(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None,
        ),
    )


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _emit(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching rules on leading dimensions."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul", f"operands must be at least 2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", f"inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError as exc:
        raise ShapeError("matmul", str(exc)) from None

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _emit(out, (a, b), backward)


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = _as_tensor(a)
    if a.ndim < 2:
        raise ShapeError("transpose", f"needs at least 2 dims, got {a.shape}")
    return _emit(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError("reshape", str(exc)) from None
    return _emit(out, (a,), lambda g: (g.reshape(a.shape),))


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit(np.asarray(out), (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return div(sum_(a, axis=axis, keepdims=keepdims), float(count))


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = np.sqrt(a.data)
    return _emit(out, (a,), lambda g: (g / (2.0 * out),))


def square(a) -> Tensor:
    a = _as_tensor(a)
    return _emit(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def leaky_relu(a, slope: float = DEFAULT_SLOPE) -> Tensor:
    """x for x >= 0, slope * x otherwise."""
    a = _as_tensor(a)
    scale = np.where(a.data >= 0.0, 1.0, slope)
    return _emit(a.data * scale, (a,), lambda g: (g * scale,))


def getitem(a, index) -> Tensor:
    a = _as_tensor(a)
    try:
        out = a.data[index]
    except IndexError as exc:
        raise ShapeError("getitem", str(exc)) from None

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _emit(np.array(out), (a,), backward)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(_as_tensor(t) for t in tensors)
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError("stack", str(exc)) from None

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _emit(out, ts, backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(_as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError("concat", str(exc)) from None
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _emit(out, ts, lambda g: tuple(np.split(g, splits, axis=axis)))


def squared_norm(a, axis=None) -> Tensor:
    return sum_(square(a), axis=axis)


def value_and_grad(
    fn: Callable[[], Tensor], params: Sequence[Tensor]
) -> tuple[float, list[np.ndarray]]:
    """Evaluate scalar ``fn()`` and its gradients with respect to ``params``.

    The gradients are also stored on each parameter's ``grad`` slot.
    """
    with Tape() as tape:
        loss = fn()
        if not isinstance(loss, Tensor):
            loss = Tensor(loss)
    grads = tape.gradient(loss, params)
    for p, g in zip(params, grads):
        p.grad = g
    return float(loss.data), grads
