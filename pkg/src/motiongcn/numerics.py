"""Dense float64 tensors with tape-based reverse-mode differentiation.

Gradient recording is explicit: ops record onto the innermost active
:class:`Tape` and nowhere else, so evaluation code simply runs outside a tape.

    >>> x = Tensor([3.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     y = (x * x).sum()
    >>> backward(tape, y)[x]
    array([6.])
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DomainError, ShapeError, TapeError

ARCCOS_EPS = 1e-6

_state = threading.local()


def _stack() -> list:
    if not hasattr(_state, "stack"):
        _state.stack = []
    return _state.stack


def active_tape() -> "Tape | None":
    stack = _stack()
    return stack[-1] if stack else None


class Tensor:
    """A float64 array plus a flag saying whether gradients should flow to it."""

    __slots__ = ("data", "requires_grad", "name")
    __array_priority__ = 1000  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scalar_mul(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if np.isscalar(other):
            return scalar_mul(self, 1.0 / other)
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return slice_(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass
class _Record:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    attrs: dict


@dataclass
class Tape:
    """Ordered log of executed ops; use as a context manager to record."""

    records: list[_Record] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()

    def __len__(self) -> int:
        return len(self.records)


class no_grad:
    """Suspend recording inside an enclosing tape."""

    def __enter__(self):
        _stack().append(None)
        return self

    def __exit__(self, *exc):
        _stack().pop()


# ---------------------------------------------------------------------------
# op registry


@dataclass(frozen=True)
class _Op:
    forward: Callable
    backward: Callable


OPS: dict[str, _Op] = {}


def _register(name: str, fwd: Callable, bwd: Callable) -> None:
    OPS[name] = _Op(fwd, bwd)


def forward(op_kind: str, *operands, **attrs) -> Tensor:
    """Run ``op_kind`` on ``operands``; record it if a tape is active."""
    try:
        op = OPS[op_kind]
    except KeyError:
        raise TapeError(f"unknown op {op_kind!r}") from None
    inputs = tuple(as_tensor(x) for x in operands)
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(op.forward(*(t.data for t in inputs), **attrs), dtype=np.float64)
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.name = None
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.records.append(_Record(op_kind, inputs, out, attrs))
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def _binary(name: str, fn: Callable, bwd: Callable) -> None:
    def fwd(a, b):
        _check_broadcast(name, a, b)
        return fn(a, b)

    _register(name, fwd, bwd)


_binary(
    "add",
    np.add,
    lambda g, ins, out: (unbroadcast(g, ins[0].shape), unbroadcast(g, ins[1].shape)),
)
_binary(
    "sub",
    np.subtract,
    lambda g, ins, out: (unbroadcast(g, ins[0].shape), unbroadcast(-g, ins[1].shape)),
)
_binary(
    "mul",
    np.multiply,
    lambda g, ins, out: (
        unbroadcast(g * ins[1], ins[0].shape),
        unbroadcast(g * ins[0], ins[1].shape),
    ),
)


def _div_forward(a, b):
    _check_broadcast("div", a, b)
    if np.any(b == 0):
        raise DomainError("div: division by zero")
    return a / b


_register(
    "div",
    _div_forward,
    lambda g, ins, out: (
        unbroadcast(g / ins[1], ins[0].shape),
        unbroadcast(-g * ins[0] / ins[1] ** 2, ins[1].shape),
    ),
)

_register(
    "scalar-mul",
    lambda a, scalar: a * float(scalar),
    lambda g, ins, out, scalar: (g * float(scalar),),
)


def _matmul_forward(a, b):
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: incompatible batch shapes {a.shape} and {b.shape}") from None
    if b.ndim == 2 and a.ndim > 2:
        # one GEMM over folded leading dims instead of a stack of small ones
        return (a.reshape(-1, a.shape[-1]) @ b).reshape(a.shape[:-1] + (b.shape[-1],))
    return np.matmul(a, b)


def _matmul_backward(g, ins, out):
    a, b = ins
    if b.ndim == 2 and a.ndim > 2:
        g2 = g.reshape(-1, g.shape[-1])
        ga = (g2 @ b.T).reshape(a.shape)
        gb = a.reshape(-1, a.shape[-1]).T @ g2
        return ga, gb
    ga = np.matmul(g, np.swapaxes(b, -1, -2))
    gb = np.matmul(np.swapaxes(a, -1, -2), g)
    return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)


_register("matmul", _matmul_forward, _matmul_backward)


def _perm(ndim: int, axes) -> tuple[int, ...]:
    if axes is None:
        if ndim < 2:
            raise ShapeError(f"transpose: needs at least 2 dims, got {ndim}")
        axes = list(range(ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    if sorted(axes) != list(range(ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for {ndim} dims")
    return axes


_register(
    "transpose",
    lambda a, axes=None: np.transpose(a, _perm(a.ndim, axes)),
    lambda g, ins, out, axes=None: (np.transpose(g, np.argsort(_perm(ins[0].ndim, axes))),),
)


def _reshape_forward(a, shape):
    try:
        return a.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from None


_register(
    "reshape",
    _reshape_forward,
    lambda g, ins, out, shape: (g.reshape(ins[0].shape),),
)

_register(
    "relu",
    lambda a: np.maximum(a, 0.0),
    lambda g, ins, out: (g * (ins[0] > 0),),
)

_register("exp", np.exp, lambda g, ins, out: (g * out,))


def _log_forward(a):
    if np.any(a <= 0):
        raise DomainError("log: argument must be strictly positive")
    return np.log(a)


_register("log", _log_forward, lambda g, ins, out: (g / ins[0],))


def _arccos_forward(a):
    return np.arccos(np.clip(a, -1.0 + ARCCOS_EPS, 1.0 - ARCCOS_EPS))


def _arccos_backward(g, ins, out):
    a = ins[0]
    inside = (a > -1.0 + ARCCOS_EPS) & (a < 1.0 - ARCCOS_EPS)
    x = np.where(inside, a, 0.0)
    return (np.where(inside, -g / np.sqrt(1.0 - x * x), 0.0),)


_register("arccos-clamped", _arccos_forward, _arccos_backward)

_register(
    "clip",
    lambda a, lo, hi: np.clip(a, lo, hi),
    lambda g, ins, out, lo, hi: (g * ((ins[0] >= lo) & (ins[0] <= hi)),),
)


def _pow_backward(g, ins, out, exponent):
    a = ins[0]
    p = float(exponent)
    if p == 0:
        return (np.zeros_like(a),)
    if p < 1:
        safe = np.where(a == 0, 1.0, a)
        return (np.where(a == 0, 0.0, g * p * safe ** (p - 1)),)
    return (g * p * a ** (p - 1),)


def _pow_forward(a, exponent):
    if float(exponent) != int(exponent) and np.any(a < 0):
        raise DomainError("pow: negative base with non-integer exponent")
    return a ** float(exponent)


_register("pow", _pow_forward, _pow_backward)


def _softmax_forward(a):
    shifted = a - a.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


_register(
    "softmax-lastdim",
    _softmax_forward,
    lambda g, ins, out: (out * (g - (g * out).sum(axis=-1, keepdims=True)),),
)


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def _reduced_count(shape, axis) -> int:
    if axis is None:
        return int(np.prod(shape))
    axes = (axis,) if isinstance(axis, int) else axis
    return int(np.prod([shape[ax] for ax in axes]))


_register(
    "sum",
    lambda a, axis=None, keepdims=False: np.sum(a, axis=axis, keepdims=keepdims),
    lambda g, ins, out, axis=None, keepdims=False: (
        np.array(_expand_reduced(g, ins[0].shape, axis, keepdims)),
    ),
)
_register(
    "mean",
    lambda a, axis=None, keepdims=False: np.mean(a, axis=axis, keepdims=keepdims),
    lambda g, ins, out, axis=None, keepdims=False: (
        _expand_reduced(g, ins[0].shape, axis, keepdims) / _reduced_count(ins[0].shape, axis),
    ),
)


def _max_backward(g, ins, out):
    a = ins[0]
    idx = np.argmax(a, axis=-1)
    grad = np.zeros_like(a)
    np.put_along_axis(grad, idx[..., None], g[..., None], axis=-1)
    return (grad,)


_register("max-lastdim", lambda a: np.max(a, axis=-1), _max_backward)


def _concat_forward(*arrays, axis=0):
    try:
        return np.concatenate(arrays, axis=axis)
    except ValueError:
        shapes = " and ".join(str(a.shape) for a in arrays)
        raise ShapeError(f"concat: incompatible shapes {shapes} on axis {axis}") from None


def _concat_backward(g, ins, out, axis=0):
    bounds = np.cumsum([a.shape[axis] for a in ins])[:-1]
    return tuple(np.split(g, bounds, axis=axis))


_register("concat", _concat_forward, _concat_backward)


def _slice_backward(g, ins, out, index):
    grad = np.zeros_like(ins[0])
    np.add.at(grad, index, g)
    return (grad,)


_register("slice", lambda a, index: np.array(a[index]), _slice_backward)


def _broadcast_forward(a, shape):
    try:
        return np.array(np.broadcast_to(a, shape))
    except ValueError:
        raise ShapeError(f"broadcast: cannot broadcast {a.shape} to {tuple(shape)}") from None


_register(
    "broadcast",
    _broadcast_forward,
    lambda g, ins, out, shape: (unbroadcast(g, ins[0].shape),),
)


def _l2_backward(g, ins, out):
    a = ins[0]
    norm = out[..., None]
    safe = np.where(norm == 0, 1.0, norm)
    return (np.where(norm == 0, 0.0, g[..., None] * a / safe),)


_register("l2-norm-lastdim", lambda a: np.sqrt(np.sum(a * a, axis=-1)), _l2_backward)


# ---------------------------------------------------------------------------
# functional front-end


def add(a, b) -> Tensor:
    return forward("add", a, b)


def sub(a, b) -> Tensor:
    return forward("sub", a, b)


def mul(a, b) -> Tensor:
    return forward("mul", a, b)


def div(a, b) -> Tensor:
    return forward("div", a, b)


def scalar_mul(a, scalar: float) -> Tensor:
    return forward("scalar-mul", a, scalar=float(scalar))


def matmul(a, b) -> Tensor:
    return forward("matmul", a, b)


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    return forward("transpose", a, axes=None if axes is None else tuple(axes))


def reshape(a, shape: Sequence[int]) -> Tensor:
    return forward("reshape", a, shape=tuple(shape))


def relu(a) -> Tensor:
    return forward("relu", a)


def exp(a) -> Tensor:
    return forward("exp", a)


def log(a) -> Tensor:
    return forward("log", a)


def arccos_clamped(a) -> Tensor:
    return forward("arccos-clamped", a)


def clip(a, lo: float, hi: float) -> Tensor:
    return forward("clip", a, lo=float(lo), hi=float(hi))


def power(a, exponent: float) -> Tensor:
    return forward("pow", a, exponent=float(exponent))


def softmax(a) -> Tensor:
    return forward("softmax-lastdim", a)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    return forward("sum", a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    return forward("mean", a, axis=axis, keepdims=keepdims)


def max_lastdim(a) -> Tensor:
    return forward("max-lastdim", a)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    return forward("concat", *tensors, axis=axis)


def slice_(a, index) -> Tensor:
    return forward("slice", a, index=index)


def broadcast(a, shape: Sequence[int]) -> Tensor:
    return forward("broadcast", a, shape=tuple(shape))


def l2_norm(a) -> Tensor:
    return forward("l2-norm-lastdim", a)


# ---------------------------------------------------------------------------
# reverse pass


def backward(
    tape: Tape, output: Tensor, wrt: Iterable[Tensor] | None = None
) -> dict[Tensor, np.ndarray]:
    """Gradients of the scalar ``output`` with respect to leaf tensors.

    With ``wrt`` given, exactly those tensors are returned (zeros for any the
    output does not depend on). Otherwise every recorded leaf that requires
    gradients is returned.
    """
    if output.size != 1:
        raise TapeError(f"backward: output must be a scalar, got shape {output.shape}")
    produced = {id(r.output) for r in tape.records}
    if id(output) not in produced:
        raise TapeError("backward: output was not recorded on this tape")

    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        op = OPS[rec.op]
        in_grads = op.backward(g, tuple(t.data for t in rec.inputs), rec.output.data, **rec.attrs)
        for t, tg in zip(rec.inputs, in_grads):
            if not t.requires_grad or tg is None:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + tg
            else:
                grads[key] = np.array(tg, dtype=np.float64)

    if wrt is None:
        seen: dict[int, Tensor] = {}
        for rec in tape.records:
            for t in rec.inputs:
                if t.requires_grad and id(t) not in produced:
                    seen.setdefault(id(t), t)
        wrt = seen.values()
    return {t: grads.get(id(t), np.zeros_like(t.data)).reshape(t.shape) for t in wrt}


def check_gradients(
    function: Callable[..., Tensor],
    point,
    h: float = 1e-5,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``point`` is one array or a sequence of arrays; ``function`` receives one
    Tensor per array and must return a scalar Tensor. The error per coordinate
    is ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if isinstance(point, (np.ndarray, Tensor)) or np.isscalar(point):
        point = [point]
    arrays = [np.array(p.data if isinstance(p, Tensor) else p, dtype=np.float64) for p in point]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = function(*leaves)
    if not isinstance(out, Tensor) or out.size != 1:
        raise TapeError("check_gradients: function must return a scalar Tensor")
    if id(out) not in {id(r.output) for r in tape.records}:
        analytic = {t: np.zeros_like(t.data) for t in leaves}
    else:
        analytic = backward(tape, out, leaves)

    worst = 0.0
    with no_grad():
        worst = _probe(function, arrays, [analytic[leaf] for leaf in leaves], h)
    return worst


def _probe(function, arrays, analytic, h) -> float:
    worst = 0.0
    for k in range(len(arrays)):
        flat = arrays[k].reshape(-1)
        g_flat = analytic[k].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            plus = function(*[Tensor(a) for a in arrays]).item()
            flat[j] = orig - h
            minus = function(*[Tensor(a) for a in arrays]).item()
            flat[j] = orig
            numeric = (plus - minus) / (2.0 * h)
            err = abs(g_flat[j] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
