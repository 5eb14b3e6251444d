"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op records its inputs and a local gradient rule when any input
requires grad. ``backward`` walks the recorded graph in reverse topological
order and returns a fresh :class:`Gradients` map; nothing is stored on the
tensors themselves, so parameters can be reused across episodes without
zeroing.
"""
from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

LOG_FLOOR = 1e-12

_ids = itertools.count()


class DimensionError(ValueError):
    """Operand shapes do not conform for the requested op."""


class DomainError(ValueError):
    """Input lies outside the mathematical domain of the op."""


class Tensor:
    __slots__ = ("value", "requires_grad", "tape_id", "_parents", "_rule", "op")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.array(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.tape_id = next(_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._rule: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        if self.value.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.value.reshape(()))

    # operator sugar
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __sub__(self, other):
        return subtract(self, as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return multiply(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value: np.ndarray, parents: tuple[Tensor, ...], rule, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.value = value
    out.tape_id = next(_ids)
    out.op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._rule = rule
    else:
        out._parents = ()
        out._rule = None
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not match")


# ---------------------------------------------------------------- primitives

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _make(a.value + b.value, (a, b), lambda g: (g, g), "add")


def subtract(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "subtract")
    return _make(a.value - b.value, (a, b), lambda g: (g, -g), "subtract")


def multiply(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; a 0-d operand acts as a scalar multiplier."""
    if a.value.ndim == 0 and b.value.ndim > 0:
        return _scalar_tensor_mul(a, b)
    if b.value.ndim == 0 and a.value.ndim > 0:
        return _scalar_tensor_mul(b, a)
    _same_shape(a, b, "multiply")
    av, bv = a.value, b.value
    return _make(av * bv, (a, b), lambda g: (g * bv, g * av), "multiply")


def _scalar_tensor_mul(s: Tensor, t: Tensor) -> Tensor:
    sv, tv = s.value, t.value

    def rule(g):
        return np.sum(g * tv), g * sv

    return _make(sv * tv, (s, t), rule, "scalar-multiply")


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.value * c, (a,), lambda g: (g * c,), "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.value, b.value
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2) or av.shape[-1] != bv.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    a2 = av if av.ndim == 2 else av[None, :]
    b2 = bv if bv.ndim == 2 else bv[:, None]

    def rule(g):
        g2 = g.reshape(a2.shape[0], b2.shape[1])
        ga = (g2 @ b2.T).reshape(av.shape)
        gb = (a2.T @ g2).reshape(bv.shape)
        return ga, gb

    return _make(av @ bv, (a, b), rule, "matmul")


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 1 or a.shape != b.shape:
        raise DimensionError(f"dot: shapes {a.shape} and {b.shape} must be equal vectors")
    av, bv = a.value, b.value
    return _make(np.asarray(av @ bv), (a, b), lambda g: (g * bv, g * av), "dot")


def transpose(a: Tensor) -> Tensor:
    if a.value.ndim != 2:
        raise DimensionError(f"transpose: expected a matrix, got shape {a.shape}")
    return _make(a.value.T.copy(), (a,), lambda g: (g.T,), "transpose")


def concat_columns(parts: Sequence[Tensor]) -> Tensor:
    rows = {p.shape[0] for p in parts}
    if any(p.value.ndim != 2 for p in parts) or len(rows) != 1:
        raise DimensionError(
            "concat-columns: shapes " + ", ".join(str(p.shape) for p in parts) + " do not conform"
        )
    widths = [p.shape[1] for p in parts]
    cuts = np.cumsum(widths)[:-1]

    def rule(g):
        return tuple(np.split(g, cuts, axis=1))

    return _make(np.concatenate([p.value for p in parts], axis=1), tuple(parts), rule,
                 "concat-columns")


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Join 0-d or 1-d tensors into one vector."""
    if any(p.value.ndim > 1 for p in parts):
        raise DimensionError("concat: expects scalars or vectors, got "
                             + ", ".join(str(p.shape) for p in parts))
    sizes = [max(p.value.size, 1) for p in parts]
    shapes = [p.shape for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def rule(g):
        return tuple(piece.reshape(s) for piece, s in zip(np.split(g, cuts), shapes))

    return _make(np.concatenate([p.value.reshape(-1) for p in parts]), tuple(parts), rule,
                 "concat")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != a.value.size:
        raise DimensionError(f"reshape: cannot view shape {a.shape} as {tuple(shape)}")
    old = a.shape
    return _make(a.value.reshape(shape).copy(), (a,), lambda g: (g.reshape(old),), "reshape")


def slice_columns(a: Tensor, start: int, stop: int) -> Tensor:
    if a.value.ndim != 2 or not 0 <= start < stop <= a.shape[1]:
        raise DimensionError(f"slice-columns: [{start}:{stop}] invalid for shape {a.shape}")
    shape = a.shape

    def rule(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _make(a.value[:, start:stop].copy(), (a,), rule, "slice-columns")


def mean_rows(a: Tensor) -> Tensor:
    if a.value.ndim != 2 or a.shape[0] == 0:
        raise DimensionError(f"mean-rows: expected a non-empty matrix, got shape {a.shape}")
    n = a.shape[0]
    return _make(a.value.mean(axis=0), (a,), lambda g: (np.tile(g / n, (n, 1)),), "mean-rows")


def tensor_sum(a: Tensor) -> Tensor:
    shape = a.shape
    return _make(np.asarray(a.value.sum()), (a,), lambda g: (np.full(shape, float(g)),), "sum")


def sigmoid(a: Tensor) -> Tensor:
    x = a.value
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    return _make(a.value * mask, (a,), lambda g: (g * mask,), "relu")


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, max-shifted."""
    x = a.value
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    out = e / e.sum(axis=-1, keepdims=True)

    def rule(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (a,), rule, "softmax")


def log(a: Tensor) -> Tensor:
    """Natural log with inputs in [0, 1e-12) clamped up to 1e-12.

    The clamp keeps saturated probabilities finite; clamped entries get zero
    gradient. Negative or NaN inputs raise :class:`DomainError`.
    """
    x = a.value
    if np.any(np.isnan(x)) or np.any(x < 0):
        raise DomainError("log: input contains negative or NaN values")
    live = x >= LOG_FLOOR
    safe = np.where(live, x, LOG_FLOOR)
    return _make(np.log(safe), (a,), lambda g: (np.where(live, g / safe, 0.0),), "log")


def sqrt(a: Tensor) -> Tensor:
    x = a.value
    if np.any(x < 0):
        raise DomainError("sqrt: negative input")
    out = np.sqrt(x)
    return _make(out, (a,), lambda g: (np.where(out > 0, g / (2.0 * np.where(out > 0, out, 1.0)), 0.0),),
                 "sqrt")


def reciprocal(a: Tensor, floor: float = 0.0) -> Tensor:
    """1 / max(x, floor). Without a floor, zero input raises."""
    x = a.value
    live = x > floor if floor > 0 else np.ones(x.shape, dtype=bool)
    if floor <= 0 and np.any(x == 0):
        raise DomainError("reciprocal: zero input")
    safe = np.where(live, x, floor)
    out = 1.0 / safe
    return _make(out, (a,), lambda g: (np.where(live, -g * out * out, 0.0),), "reciprocal")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip into [lo, hi]; clipped entries pass no gradient."""
    v = a.value
    live = (v >= lo) & (v <= hi)
    return _make(np.clip(v, lo, hi), (a,), lambda g: (np.where(live, g, 0.0),), "clamp")


def row_norms(a: Tensor) -> Tensor:
    """Euclidean norm of each row. The gradient at a zero row is taken as 0."""
    if a.value.ndim != 2:
        raise DimensionError(f"row-norms: expected a matrix, got shape {a.shape}")
    x = a.value
    n = np.sqrt((x * x).sum(axis=1))
    inv = np.divide(1.0, n, out=np.zeros_like(n), where=n > 0)
    return _make(n, (a,), lambda g: ((g * inv)[:, None] * x,), "row-norms")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * out,), "exp")


# ---------------------------------------------------------------- backward

class Gradients:
    """Gradient map keyed by tensor; tensors the loss never reached read as zeros."""

    def __init__(self, grads: dict[int, np.ndarray]):
        self._grads = grads

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._grads.get(t.tape_id)
        return np.zeros(t.shape) if g is None else g

    def __contains__(self, t: Tensor) -> bool:
        return t.tape_id in self._grads


def tape(loss: Tensor) -> list[Tensor]:
    """Recorded ops reachable from ``loss`` in topological order (inputs first)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.tape_id in seen:
            continue
        seen.add(node.tape_id)
        stack.append((node, True))
        for p in node._parents:
            if p.tape_id not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> Gradients:
    if loss.value.size != 1 or loss.value.ndim > 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    if not loss.requires_grad:
        return Gradients(grads)
    grads[loss.tape_id] = np.ones(loss.shape)
    for node in reversed(tape(loss)):
        g = grads.get(node.tape_id)
        if g is None or node._rule is None:
            continue
        for parent, pg in zip(node._parents, node._rule(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(parent.tape_id)
            grads[parent.tape_id] = pg if prev is None else prev + pg
    return Gradients(grads)


def finite_difference_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|)."""
    if step <= 0:
        raise ValueError("step must be positive")
    xt = Tensor(x.value.copy(), requires_grad=True)
    y = f(xt)
    if not np.all(np.isfinite(y.value)):
        raise FloatingPointError("f(x) is not finite")
    analytic = backward(y)[xt].reshape(-1)
    base = x.value.reshape(-1)
    worst = 0.0
    for i in range(base.size):
        probe = base.copy()
        probe[i] += step
        hi = f(Tensor(probe.reshape(x.shape))).item()
        probe[i] -= 2 * step
        lo = f(Tensor(probe.reshape(x.shape))).item()
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise FloatingPointError(f"f is not finite near coordinate {i}")
        numeric = (hi - lo) / (2 * step)
        worst = max(worst, abs(analytic[i] - numeric) / max(1.0, abs(analytic[i])))
    return worst


def parameter_gradient_check(
    loss_fn: Callable[[], Tensor], params: Iterable[Tensor], step: float = 1e-5
) -> float:
    """Like :func:`finite_difference_check`, but perturbs several parameters in place."""
    params = list(params)
    grads = backward(loss_fn())
    worst = 0.0
    for p in params:
        analytic = grads[p].reshape(-1)
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = loss_fn().item()
            flat[i] = orig - step
            lo = loss_fn().item()
            flat[i] = orig
            numeric = (hi - lo) / (2 * step)
            worst = max(worst, abs(analytic[i] - numeric) / max(1.0, abs(analytic[i])))
    return worst
