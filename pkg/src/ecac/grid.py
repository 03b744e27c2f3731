"""Dense float64 grids with reverse-mode gradient accumulation.

Every tensor in the library is a :class:`Grid`: a contiguous row-major
float64 array plus an optional gradient buffer. Operations record a
backward closure on their output so that :func:`backward` can push the
adjoint of a scalar result onto every ``requires_grad`` leaf. Values are
checked for finiteness after every public operation; NaN/Inf is treated
as an error state, never silently propagated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

Array = np.ndarray


def _check_finite(arr: Array, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op}: produced non-finite values")


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Grid:
    """Multi-dimensional float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        _check_finite(arr, "Grid")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self._parents: tuple[Grid, ...] = ()
        self._backward: Callable[[Array], tuple[Array | None, ...]] | None = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Grid(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item: grid has {self.data.size} elements, expected 1")
        return float(self.data.reshape(()))

    def numpy(self) -> Array:
        return self.data

    # -- gradient bookkeeping -------------------------------------------

    def detach(self) -> "Grid":
        return Grid(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- operators -------------------------------------------------------

    def __add__(self, other) -> "Grid":
        return add(self, other)

    def __radd__(self, other) -> "Grid":
        return add(other, self)

    def __sub__(self, other) -> "Grid":
        return sub(self, other)

    def __rsub__(self, other) -> "Grid":
        return sub(other, self)

    def __mul__(self, other) -> "Grid":
        return mul(self, other)

    def __rmul__(self, other) -> "Grid":
        return mul(other, self)

    def __truediv__(self, other) -> "Grid":
        return div(self, other)

    def __rtruediv__(self, other) -> "Grid":
        return div(other, self)

    def __neg__(self) -> "Grid":
        return _make("neg", -self.data, (self,), lambda g: (-g,))

    def __pow__(self, p) -> "Grid":
        if not isinstance(p, (int, float)):
            raise ContractError("pow: exponent must be a python scalar")
        x = self
        data = x.data**p
        return _make("pow", data, (x,), lambda g: (g * p * x.data ** (p - 1),))

    def __matmul__(self, other) -> "Grid":
        return matmul(self, other)

    @property
    def T(self) -> "Grid":
        return transpose(self)

    # -- elementwise methods ----------------------------------------------

    def exp(self) -> "Grid":
        out = np.exp(self.data)
        return _make("exp", out, (self,), lambda g: (g * out,))

    def log(self) -> "Grid":
        x = self
        return _make("log", np.log(x.data), (x,), lambda g: (g / x.data,))

    def sqrt(self) -> "Grid":
        out = np.sqrt(self.data)
        return _make("sqrt", out, (self,), lambda g: (g / (2.0 * out),))

    def relu(self) -> "Grid":
        x = self
        mask = x.data > 0.0
        return _make("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))

    def clamp_min(self, lo: float) -> "Grid":
        x = self
        mask = x.data > lo
        return _make(
            "clamp_min", np.where(mask, x.data, lo), (x,), lambda g: (g * mask,)
        )

    # -- shape methods -----------------------------------------------------

    def reshape(self, *shape) -> "Grid":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        x = self
        old = x.data.shape
        try:
            data = x.data.reshape(shape)
        except ValueError as exc:
            raise DimensionError(f"reshape: {old} -> {shape}: {exc}") from None
        return _make("reshape", data, (x,), lambda g: (g.reshape(old),))

    def sum(self, axis=None, keepdims: bool = False) -> "Grid":
        x = self
        data = x.data.sum(axis=axis, keepdims=keepdims)

        def back(g: Array) -> tuple[Array]:
            if axis is None:
                return (np.broadcast_to(g, x.data.shape).copy(),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, x.data.shape).copy(),)

        return _make("sum", data, (x,), back)

    def mean(self, axis=None, keepdims: bool = False) -> "Grid":
        x = self
        count = x.data.size if axis is None else x.data.shape[axis]
        return x.sum(axis=axis, keepdims=keepdims) * (1.0 / count)


def _coerce(x) -> Grid:
    if isinstance(x, Grid):
        return x
    return Grid(np.asarray(x, dtype=np.float64))


def _make(
    op: str,
    data: Array,
    parents: tuple[Grid, ...],
    back: Callable[[Array], tuple[Array | None, ...]],
) -> Grid:
    arr = np.ascontiguousarray(data, dtype=np.float64)
    _check_finite(arr, op)
    out = Grid.__new__(Grid)
    out.data = arr
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = back
    else:
        out._parents = ()
        out._backward = None
    return out


# -- arithmetic ------------------------------------------------------------


def add(a, b) -> Grid:
    a, b = _coerce(a), _coerce(b)
    return _make(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a, b) -> Grid:
    a, b = _coerce(a), _coerce(b)
    return _make(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a, b) -> Grid:
    a, b = _coerce(a), _coerce(b)
    return _make(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def div(a, b) -> Grid:
    a, b = _coerce(a), _coerce(b)
    return _make(
        "div",
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
    )


def matmul(a: Grid, b: Grid) -> Grid:
    a, b = _coerce(a), _coerce(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(
            f"matmul: expected two matrices, got shapes {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul: inner extents disagree, {a.shape} vs {b.shape}"
        )
    return _make(
        "matmul",
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def transpose(a: Grid) -> Grid:
    a = _coerce(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose: expected a matrix, got shape {a.shape}")
    return _make("transpose", a.data.T, (a,), lambda g: (g.T,))


def concat(grids: Sequence[Grid], axis: int) -> Grid:
    gs = [_coerce(g) for g in grids]
    try:
        data = np.concatenate([g.data for g in gs], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    sizes = [g.data.shape[axis] for g in gs]
    bounds = np.cumsum(sizes)[:-1]

    def back(g: Array) -> tuple[Array, ...]:
        return tuple(np.ascontiguousarray(p) for p in np.split(g, bounds, axis=axis))

    return _make("concat", data, tuple(gs), back)


def _check_axis(x: Grid, axis: int, op: str) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"{op}: axis {axis} invalid for shape {x.shape}")
    return axis % x.ndim


def softmax(x: Grid, axis: int) -> Grid:
    """Max-shifted exponential normalization along ``axis``."""
    x = _coerce(x)
    axis = _check_axis(x, axis, "softmax")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g: Array) -> tuple[Array]:
        inner = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - inner),)

    return _make("softmax", s, (x,), back)


def log_softmax(x: Grid, axis: int) -> Grid:
    """Log-probabilities computed without exponentiation blow-up."""
    x = _coerce(x)
    axis = _check_axis(x, axis, "log_softmax")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def back(g: Array) -> tuple[Array]:
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return _make("log_softmax", out, (x,), back)


def cosine_similarity(a: Grid, b: Grid, eps: float = 1e-8) -> Grid:
    """Cosine of the angle between two vectors, denominator clamped at ``eps``."""
    a, b = _coerce(a), _coerce(b)
    if eps <= 0:
        raise ContractError(f"cosine_similarity: eps must be positive, got {eps}")
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise DimensionError(
            f"cosine_similarity: expected equal-length vectors, got {a.shape} and {b.shape}"
        )
    dot = (a * b).sum()
    denom = ((a * a).sum().sqrt() * (b * b).sum().sqrt()).clamp_min(eps)
    return dot / denom


# -- reverse pass ------------------------------------------------------------


def backward(loss: Grid) -> None:
    """Accumulate d(loss)/d(leaf) into every ``requires_grad`` leaf.

    Repeated calls without clearing the leaves' ``grad`` buffers add up.
    """
    if loss.data.size != 1:
        raise ContractError(
            f"backward: loss must be a scalar, got shape {loss.shape}"
        )
    if not loss.requires_grad:
        return

    topo: list[Grid] = []
    seen: set[int] = set()
    stack: list[tuple[Grid, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    pending: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node._accumulate(g)
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg


def zero_grads(params: Iterable[Grid]) -> None:
    for p in params:
        p.zero_grad()


# -- finite-difference verification ------------------------------------------


@dataclass(frozen=True)
class GradCheckReport:
    """Worst-case agreement between analytic and central-difference gradients."""

    operation: str
    max_rel_error: float
    per_param: tuple[tuple[str, float], ...]
    step: float


def _rel_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def grad_check(
    loss_fn: Callable[[], Grid],
    params: Mapping[str, Grid],
    step: float = 1e-5,
    operation: str = "loss",
) -> GradCheckReport:
    """Compare analytic gradients of ``loss_fn`` against central differences.

    ``loss_fn`` must be deterministic in the current parameter values; it is
    re-evaluated many times while individual scalars are perturbed in place.
    """
    if not 0.0 < step <= 1e-3:
        raise ContractError(f"grad_check: step must lie in (0, 1e-3], got {step}")
    base1 = loss_fn().item()
    base2 = loss_fn().item()
    if base1 != base2:
        raise ContractError(
            f"grad_check: loss is not deterministic ({base1!r} != {base2!r})"
        )

    zero_grads(params.values())
    backward(loss_fn())
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
    zero_grads(params.values())

    per_param: list[tuple[str, float]] = []
    for name, p in params.items():
        flat = p.data.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = loss_fn().item()
            flat[i] = orig - step
            f_minus = loss_fn().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            worst = max(worst, _rel_error(float(analytic[name].reshape(-1)[i]), numeric))
        per_param.append((name, worst))

    max_err = max((e for _, e in per_param), default=0.0)
    return GradCheckReport(operation, max_err, tuple(per_param), step)
