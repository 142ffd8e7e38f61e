"""Tape-based reverse-mode automatic differentiation over float64 arrays.

Every value produced during a forward pass is a :class:`Tensor` recorded on a
:class:`Tape`. Nodes are appended in creation order, so the tape is already in
topological order and :func:`backward` only needs a single reverse sweep.

    tape = Tape()
    w = tape.param(np.ones((3, 2)))
    x = tape.constant(np.ones((2, 3)))
    loss = ad.sum(ad.tanh(x @ w))
    grads = backward(tape, loss)
    grads[w]
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tape",
    "Tensor",
    "GradMap",
    "ShapeError",
    "backward",
    "primitive",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "concat",
    "slice_last",
    "reshape",
    "tanh",
    "sigmoid",
    "relu",
    "softplus",
    "exp",
    "log",
    "mean",
    "sum",
    "outer",
    "embedding",
    "GradCheckReport",
    "finite_difference_check",
    "assert_finite",
]


class ShapeError(ValueError):
    """Raised when a primitive receives incompatible input shapes."""


def _shape_error(op: str, *shapes) -> ShapeError:
    joined = " and ".join(str(tuple(s)) for s in shapes)
    return ShapeError(f"{op}: incompatible shapes {joined}")


class Tensor:
    """A float64 value living on a tape.

    ``value`` is a C-contiguous ndarray; shape is available as ``.shape``.
    Arithmetic operators dispatch to the primitives below.
    """

    __slots__ = ("tape", "index", "value", "requires_grad", "name")

    def __init__(self, tape: "Tape", index: int, value: np.ndarray, requires_grad: bool, name=None):
        self.tape = tape
        self.index = index
        self.value = value
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor#{self.index}{tag}(shape={self.shape})"

    def __add__(self, other):
        return add(self, _lift(self.tape, other))

    def __radd__(self, other):
        return add(_lift(self.tape, other), self)

    def __sub__(self, other):
        return sub(self, _lift(self.tape, other))

    def __rsub__(self, other):
        return sub(_lift(self.tape, other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, _lift(self.tape, other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _lift(self.tape, other))


def _lift(tape: "Tape", x) -> Tensor:
    if isinstance(x, Tensor):
        if x.tape is not tape:
            raise ValueError("cannot mix tensors from different tapes")
        return x
    return tape.constant(x)


@dataclass(eq=False)
class _Node:
    op: str
    inputs: tuple[int, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None


@dataclass(eq=False)
class Tape:
    """Ordered record of primitive applications for one forward pass.

    A tape is single-use per training step and not thread-safe.
    """

    nodes: list[_Node] = field(default_factory=list)
    tensors: list[Tensor] = field(default_factory=list)
    parameters: set[int] = field(default_factory=set)

    def _push(self, op, inputs, value, vjp, requires_grad, name=None) -> Tensor:
        t = Tensor(self, len(self.nodes), value, requires_grad, name)
        self.nodes.append(_Node(op, inputs, vjp))
        self.tensors.append(t)
        return t

    def param(self, value, name=None) -> Tensor:
        """Record a trainable leaf. The array is copied."""
        arr = np.array(value, dtype=np.float64)
        t = self._push("param", (), arr, None, True, name)
        self.parameters.add(t.index)
        return t

    def constant(self, value, name=None) -> Tensor:
        arr = np.asarray(value, dtype=np.float64)
        return self._push("const", (), arr, None, False, name)

    def __len__(self):
        return len(self.nodes)


class GradMap(dict):
    """Mapping node index -> gradient array; also indexable by Tensor."""

    def __getitem__(self, key):
        if isinstance(key, Tensor):
            key = key.index
        return super().__getitem__(key)

    def __contains__(self, key):
        if isinstance(key, Tensor):
            key = key.index
        return super().__contains__(key)

    def get(self, key, default=None):
        if isinstance(key, Tensor):
            key = key.index
        return super().get(key, default)


def primitive(op: str, inputs: Sequence[Tensor], value: np.ndarray, vjp) -> Tensor:
    """Record a new primitive application.

    ``vjp(g)`` must return one gradient (or None) per input, each with the
    same shape as that input's value. Used by other modules to register
    fused operations with hand-written adjoints.
    """
    tape = inputs[0].tape
    for t in inputs[1:]:
        if t.tape is not tape:
            raise ValueError(f"{op}: inputs come from different tapes")
    requires_grad = any(t.requires_grad for t in inputs)
    return tape._push(op, tuple(t.index for t in inputs), value,
                      vjp if requires_grad else None, requires_grad)


def backward(tape: Tape, loss: Tensor) -> GradMap:
    """Reverse sweep from a scalar loss.

    Returns gradients for every node that the loss depends on through
    trainable leaves; parameter entries are always present (zeros when the
    loss does not touch them).
    """
    if loss.tape is not tape:
        raise ValueError("loss tensor is not on this tape")
    if loss.value.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value)}
    tensors = tape.tensors
    for i in range(loss.index, -1, -1):
        g = grads.get(i)
        node = tape.nodes[i]
        if g is None or node.vjp is None:
            continue
        in_grads = node.vjp(g)
        for j, gj in zip(node.inputs, in_grads):
            if gj is None or not tensors[j].requires_grad:
                continue
            prev = grads.get(j)
            if prev is None:
                grads[j] = gj
            else:
                grads[j] = prev + gj
    out = GradMap()
    for i, g in grads.items():
        out[i] = g
    for p in tape.parameters:
        if p not in out:
            out[p] = np.zeros_like(tensors[p].value)
    return out


# ---------------------------------------------------------------------------
# primitives


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise _shape_error(op, a.shape, b.shape) from None


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy ``matmul`` semantics (batched when ndim 3)."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise _shape_error("matmul", a.shape, b.shape)
    if a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    av, bv = a.value, b.value
    out = av @ bv

    def vjp(g):
        ga = g @ np.swapaxes(bv, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(av, -1, -2) @ g if b.requires_grad else None
        if ga is not None:
            ga = _unbroadcast(ga, av.shape)
        if gb is not None:
            gb = _unbroadcast(gb, bv.shape)
        return ga, gb

    return primitive("matmul", (a, b), out, vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return primitive("add", (a, b), a.value + b.value,
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return primitive("sub", (a, b), a.value - b.value,
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product (numpy broadcasting)."""
    if a.shape != b.shape:
        _broadcast_shape("mul", a, b)
    av, bv = a.value, b.value

    def vjp(g):
        ga = _unbroadcast(g * bv, av.shape) if a.requires_grad else None
        gb = _unbroadcast(g * av, bv.shape) if b.requires_grad else None
        return ga, gb

    return primitive("mul", (a, b), av * bv, vjp)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return primitive("scale", (a,), a.value * c, lambda g: (g * c,))


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise _shape_error("concat", parts[0].shape, p.shape)
    widths = [p.shape[-1] for p in parts]
    bounds = np.cumsum([0] + widths)

    def vjp(g):
        return tuple(g[..., bounds[k]:bounds[k + 1]] for k in range(len(parts)))

    out = np.concatenate([p.value for p in parts], axis=-1)
    return primitive("concat", tuple(parts), out, vjp)


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    """``a[..., start:stop]``."""
    n = a.shape[-1]
    if not 0 <= start < stop <= n:
        raise ShapeError(f"slice: range [{start}, {stop}) invalid for shape {a.shape}")
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        full[..., start:stop] = g
        return (full,)

    return primitive("slice", (a,), a.value[..., start:stop], vjp)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise _shape_error("reshape", old, shape) from None
    return primitive("reshape", (a,), out, lambda g: (g.reshape(old),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.value)
    return primitive("tanh", (a,), y, lambda g: (g * (1.0 - y * y),))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.value)
    return primitive("sigmoid", (a,), y, lambda g: (g * y * (1.0 - y),))


def relu(a: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    mask = a.value > 0
    return primitive("relu", (a,), np.where(mask, a.value, 0.0), lambda g: (g * mask,))


def softplus(a: Tensor) -> Tensor:
    x = a.value
    return primitive("softplus", (a,), np.logaddexp(0.0, x), lambda g: (g * _sigmoid(x),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.value)
    return primitive("exp", (a,), y, lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    x = a.value
    return primitive("log", (a,), np.log(x), lambda g: (g / x,))


def sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape
    out = np.sum(a.value, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return primitive("sum", (a,), np.asarray(out, dtype=np.float64), vjp)


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    n = a.value.size if axis is None else shape[axis]
    out = np.mean(a.value, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).copy(),)

    return primitive("mean", (a,), np.asarray(out, dtype=np.float64), vjp)


def outer(a: Tensor, b: Tensor) -> Tensor:
    """Outer product of vectors; row-wise (batch x n x m) for 2-d inputs."""
    if a.ndim != b.ndim or a.ndim not in (1, 2) or (a.ndim == 2 and a.shape[0] != b.shape[0]):
        raise _shape_error("outer", a.shape, b.shape)
    av, bv = a.value, b.value
    out = av[..., :, None] * bv[..., None, :]

    def vjp(g):
        ga = np.einsum("...ij,...j->...i", g, bv) if a.requires_grad else None
        gb = np.einsum("...ij,...i->...j", g, av) if b.requires_grad else None
        return ga, gb

    return primitive("outer", (a, b), out, vjp)


def embedding(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table``; the adjoint scatter-adds into those rows."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise TypeError("embedding: ids must be integers")
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"embedding: id out of range for vocabulary of size {vocab}")
    shape = table.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, ids, g)
        return (full,)

    return primitive("embedding", (table,), table.value[ids], vjp)


def assert_finite(t: Tensor | np.ndarray, what: str = "value") -> None:
    v = t.value if isinstance(t, Tensor) else t
    if not np.all(np.isfinite(v)):
        raise FloatingPointError(f"non-finite entries in {what}")


# ---------------------------------------------------------------------------
# finite-difference checking


@dataclass
class GradCheckReport:
    """Per-parameter relative error between tape and central-difference gradients.

    The error for one parameter is ``|g_tape - g_fd| / max(|g_tape| + |g_fd|, 1e-12)``
    using Euclidean norms over the whole parameter.
    """

    name: str
    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: max rel err {self.max_error:.3e} (tol {self.tolerance:g})"


def finite_difference_check(
    builder: Callable[[Tape, dict[str, Tensor]], Tensor],
    params: dict[str, np.ndarray],
    tolerance: float = 1e-4,
    step: float = 1e-5,
    name: str = "check",
) -> GradCheckReport:
    """Compare tape gradients of ``builder`` with central differences.

    ``builder(tape, nodes)`` must build a deterministic scalar loss from the
    parameter nodes it is handed.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def run(values):
        tape = Tape()
        nodes = {k: tape.param(v, name=k) for k, v in values.items()}
        return tape, nodes, builder(tape, nodes)

    tape, nodes, loss = run(params)
    grads = backward(tape, loss)
    errors = {}
    for key, base in params.items():
        numeric = np.zeros_like(base)
        flat = numeric.reshape(-1)
        for i in range(base.size):
            values = dict(params)
            plus = base.copy().reshape(-1)
            minus = base.copy().reshape(-1)
            plus[i] += step
            minus[i] -= step
            values[key] = plus.reshape(base.shape)
            f_plus = run(values)[2].value.item()
            values[key] = minus.reshape(base.shape)
            f_minus = run(values)[2].value.item()
            flat[i] = (f_plus - f_minus) / (2 * step)
        analytic = grads[nodes[key]]
        denom = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
        errors[key] = float(np.linalg.norm(analytic - numeric) / denom)
    return GradCheckReport(name, errors, tolerance)
