"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` when at
least one input requires a gradient. Without an active tape they just compute
values, which is how inference runs.

Example::

    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    with Tape() as tape:
        loss = (x * x).sum()
    backward(loss, tape)
    x.grad  # array([2., 4., 6.])
"""

from __future__ import annotations

import logging
from typing import Callable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

DTYPE = np.float64


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """An input lies outside an operation's domain."""


class ContractError(RuntimeError):
    """A caller violated an operation's precondition."""


class NonFiniteError(FloatingPointError):
    """A NaN or infinity appeared in values or gradients."""


# clamp events, keyed by the name passed to clamp_min
diagnostics: dict[str, int] = {}


def reset_diagnostics() -> None:
    diagnostics.clear()


class Tensor:
    """A dense array of float64 values with an optional gradient buffer."""

    __slots__ = ("values", "grad", "requires_grad", "name")

    def __init__(self, values, requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(values, np.ndarray):
            self.values = np.ascontiguousarray(values, dtype=DTYPE)
        else:
            self.values = np.array(values, dtype=DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.values

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return index_select(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class IndexedGrad:
    """A gradient that is nonzero only at ``index`` of its input."""

    __slots__ = ("index", "value", "basic")

    def __init__(self, index, value, basic: bool = True):
        self.index = index
        self.value = value
        self.basic = basic


class _Node:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


_tape_stack: list["Tape"] = []


class Tape:
    """Append-only record of operations, used as a context manager."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)


def active_tape() -> Optional[Tape]:
    return _tape_stack[-1] if _tape_stack else None


class no_record:
    """Suspend recording inside a block, e.g. for inference under a training tape."""

    def __enter__(self):
        self._saved = list(_tape_stack)
        _tape_stack.clear()

    def __exit__(self, *exc):
        _tape_stack.extend(self._saved)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {what}")


def _make(values: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    """Wrap an op result and record it when a tape is active.

    ``backward_fn(g)`` receives the upstream gradient and returns one gradient
    (or None) per input.
    """
    _check_finite(values, op)
    out = Tensor.__new__(Tensor)
    out.values = values if values.dtype == DTYPE else values.astype(DTYPE)
    out.grad = None
    out.name = None
    out.requires_grad = any(t.requires_grad for t in inputs)
    tape = active_tape()
    if out.requires_grad and tape is not None:
        tape.nodes.append(_Node(tuple(inputs), out, backward_fn))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Reverse-mode accumulation of d(loss)/d(input) over ``tape``.

    Leaf gradients accumulate across calls; intermediate gradients are reset
    first, so calling twice without zeroing doubles every leaf gradient.
    """
    if loss.values.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    for node in tape.nodes:
        node.output.grad = None
    loss.grad = np.ones_like(loss.values)
    for node in reversed(tape.nodes):
        g = node.output.grad
        if g is None:
            continue
        grads = node.backward_fn(g)
        for t, gi in zip(node.inputs, grads):
            if gi is None or not t.requires_grad:
                continue
            if isinstance(gi, IndexedGrad):
                if t.grad is None:
                    t.grad = np.zeros(t.values.shape)
                if gi.basic:
                    t.grad[gi.index] += gi.value
                else:
                    np.add.at(t.grad, gi.index, gi.value)
                continue
            if gi.shape != t.values.shape:
                gi = np.broadcast_to(gi, t.values.shape)
            if t.grad is None:
                t.grad = np.array(gi, dtype=DTYPE)
            else:
                t.grad += gi
    produced = {id(node.output) for node in tape.nodes}
    seen: set[int] = set()
    for node in tape.nodes:
        for t in node.inputs:
            if id(t) in produced or id(t) in seen:
                continue
            seen.add(id(t))
            if t.grad is not None and not np.isfinite(t.grad).all():
                raise NonFiniteError(f"non-finite gradient for {t.name or t.shape}")


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.values + b.values
    except ValueError as exc:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}") from exc
    sa, sb = a.shape, b.shape
    return _make(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.values - b.values
    except ValueError as exc:
        raise DimensionError(f"cannot subtract shapes {a.shape} and {b.shape}") from exc
    sa, sb = a.shape, b.shape
    return _make(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.values * b.values
    except ValueError as exc:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}") from exc
    av, bv = a.values, b.values

    def bw(g):
        return (
            _unbroadcast(g * bv, av.shape) if a.requires_grad else None,
            _unbroadcast(g * av, bv.shape) if b.requires_grad else None,
        )

    return _make(out, (a, b), bw, "mul")


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching rules (at least 2-D on both sides).

    A 1-D right operand is treated as a column vector and the trailing axis
    of the result is dropped, matching ``np.matmul``.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.values, b.values)
    except ValueError as exc:
        raise DimensionError(f"matmul shapes incompatible: {a.shape} @ {b.shape}") from exc
    av, bv = a.values, b.values

    def bw(g):
        ga = gb = None
        if a.ndim == 1 and b.ndim == 1:
            return g * bv, g * av
        if a.ndim == 1:
            if a.requires_grad:
                ga = np.matmul(bv, g[..., None])[..., 0]
                ga = ga.reshape(-1, av.shape[0]).sum(axis=0)
            if b.requires_grad:
                gb = _unbroadcast(av[:, None] * g[..., None, :], bv.shape)
            return ga, gb
        if b.ndim == 1:
            if a.requires_grad:
                ga = g[..., None] * bv
            if b.requires_grad:
                gb = g.reshape(-1) @ av.reshape(-1, bv.shape[0])
            return ga, gb
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(bv, -1, -2)), av.shape)
        if b.requires_grad:
            if bv.ndim == 2 and av.ndim > 2:
                gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(av, -1, -2), g), bv.shape)
        return ga, gb

    return _make(out, (a, b), bw, "matmul")


# ---------------------------------------------------------------- pointwise


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.values
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.values)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.values > 0
    return _make(np.where(on, a.values, 0.0), (a,), lambda g: (g * on,), "relu")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.values)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if (a.values <= 0).any():
        raise DomainError("log of a nonpositive entry")
    x = a.values
    return _make(np.log(x), (a,), lambda g: (g / x,), "log")


POINTWISE = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu, "exp": exp, "log": log}


def pointwise(f: str, a) -> Tensor:
    try:
        fn = POINTWISE[f]
    except KeyError:
        raise ValueError(f"unknown pointwise function {f!r}; expected one of {sorted(POINTWISE)}") from None
    return fn(a)


def clamp_min(a, floor: float, counter: Optional[str] = None) -> Tensor:
    """max(a, floor); entries below the floor get zero gradient.

    Each clamped entry increments ``diagnostics[counter]`` when a counter name is given.
    """
    a = as_tensor(a)
    keep = a.values >= floor
    if counter is not None:
        n = int(keep.size - keep.sum())
        if n:
            diagnostics[counter] = diagnostics.get(counter, 0) + n
    out = np.where(keep, a.values, floor)
    return _make(out, (a,), lambda g: (g * keep,), "clamp_min")


def safe_log(a, floor: float = 1e-12, counter: Optional[str] = None) -> Tensor:
    return log(clamp_min(a, floor, counter))


# ---------------------------------------------------------------- reductions / shape


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = np.asarray(a.values.sum(axis=axis, keepdims=keepdims))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.values.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.values.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {old} to {shape}") from exc
    return _make(out, (a,), lambda g: (g.reshape(old),), "reshape")


def _is_basic(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)


def index_select(a, index) -> Tensor:
    """Basic or advanced numpy indexing; backward scatter-adds."""
    a = as_tensor(a)
    out = np.array(a.values[index])
    basic = _is_basic(index)
    return _make(out, (a,), lambda g: (IndexedGrad(index, g, basic),), "index")


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat of an empty list")
    if len(parts) == 1:
        return parts[0]
    try:
        out = np.concatenate([p.values for p in parts], axis=axis)
    except ValueError as exc:
        raise DimensionError(
            f"concat extents disagree off axis {axis}: {[p.shape for p in parts]}") from exc
    ax = axis % out.ndim
    bounds = np.cumsum([p.shape[ax] for p in parts])[:-1]
    return _make(out, parts, lambda g: tuple(np.split(g, bounds, axis=ax)), "concat")


def stack(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    try:
        out = np.stack([p.values for p in parts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"stack shapes disagree: {[p.shape for p in parts]}") from exc
    ax = axis % out.ndim
    return _make(out, parts,
                 lambda g: tuple(np.take(g, i, axis=ax) for i in range(len(parts))), "stack")


def gather_rows(table, ids) -> Tensor:
    """Embedding lookup: ``out[..., :] = table[ids[...]]``."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    n = table.shape[0]
    bad = (ids < 0) | (ids >= n)
    if bad.any():
        raise IndexError(f"row id {int(ids[bad].reshape(-1)[0])} outside [0, {n})")
    out = table.values[ids]
    shape = table.shape

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[-1]))
        return (full,)

    return _make(out, (table,), bw, "gather_rows")


def take_last(a, index) -> Tensor:
    """``out[...] = a[..., index[...]]`` along the last axis."""
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.int64)[..., None]
    out = np.take_along_axis(a.values, idx, axis=-1)[..., 0]
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        np.put_along_axis(full, idx, g[..., None], axis=-1)
        return (full,)

    return _make(out, (a,), bw, "take_last")


def scatter_add_last(src, index, size: int) -> Tensor:
    """``out[..., k] = sum of src[..., i] over i with index[..., i] == k``."""
    src = as_tensor(src)
    index = np.asarray(index, dtype=np.int64)
    lead = src.shape[:-1]
    flat_src = src.values.reshape(-1, src.shape[-1])
    flat_idx = np.broadcast_to(index, src.shape).reshape(-1, src.shape[-1])
    rows = np.arange(flat_src.shape[0])[:, None]
    out = np.zeros((flat_src.shape[0], size))
    np.add.at(out, (rows, flat_idx), flat_src)
    out = out.reshape(lead + (size,))

    def bw(g):
        gf = g.reshape(-1, size)
        return (np.take_along_axis(gf, flat_idx, axis=-1).reshape(src.shape),)

    return _make(out, (src,), bw, "scatter_add")


def softmax(a, axis: int = -1, mask=None) -> Tensor:
    """Max-subtracted softmax; masked-out entries (mask False) get probability 0."""
    a = as_tensor(a)
    if a.ndim == 0 or a.shape[axis] == 0:
        raise DimensionError(f"softmax over an empty axis of shape {a.shape}")
    x = a.values
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not mask.any(axis=axis).all():
            raise ContractError("softmax with every position masked")
        x = np.where(mask, x, -np.inf)
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    out = z / z.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), bw, "softmax")


def masked_max(a, mask, axis: int) -> Tensor:
    """Max over ``axis`` ignoring masked-out entries; ties send gradient to the first."""
    a = as_tensor(a)
    m = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    if not m.any(axis=axis).all():
        raise ContractError("max-pool with every position masked")
    x = np.where(m, a.values, -np.inf)
    arg = np.expand_dims(x.argmax(axis=axis), axis)
    out = np.take_along_axis(a.values, arg, axis=axis).squeeze(axis)
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        np.put_along_axis(full, arg, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _make(out, (a,), bw, "masked_max")


def custom(values: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    """Record a hand-derived op; ``backward_fn`` returns one gradient per input."""
    return _make(values, [as_tensor(t) for t in inputs], backward_fn, op)


# ---------------------------------------------------------------- gradient checking


def grad_check(f: Callable[[], Tensor], theta: Tensor, eps: float = 1e-5, tol: float = 1e-4,
               floor: float = 1e-6, coords: Optional[Sequence[int]] = None) -> float:
    """Max relative error between backprop and central differences for ``theta``.

    ``f`` rebuilds the scalar loss from current parameter values each call.
    Relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    Passing ``coords`` restricts the check to those flat indices.

    Raises ContractError if ``f`` is not deterministic. Returns the error; the
    check passes iff it is <= ``tol`` (logged either way).
    """
    if not 0.0 < eps <= 1e-2:
        raise ContractError(f"eps must lie in (0, 1e-2], got {eps}")
    theta.requires_grad = True
    theta.grad = None
    with Tape() as tape:
        loss = f()
    with no_record():
        again = f().values
    if not np.array_equal(loss.values, again):
        raise ContractError("grad_check target is not deterministic")
    backward(loss, tape)
    analytic = np.zeros(theta.values.size) if theta.grad is None else theta.grad.reshape(-1).copy()
    flat = theta.values.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    worst = 0.0
    with no_record():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = f().item()
            flat[i] = orig - eps
            down = f().item()
            flat[i] = orig
            num = (up - down) / (2.0 * eps)
            err = abs(analytic[i] - num) / max(abs(analytic[i]), abs(num), floor)
            worst = max(worst, err)
    theta.grad = None
    logger.debug("grad_check max rel err %.3e (tol %.1e)", worst, tol)
    return worst
