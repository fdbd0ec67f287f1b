"""Dense float64 kernel with a reverse-mode operation tape.

Every differentiable operation in the package goes through :class:`Tensor`.
Operations executed while a :class:`Tape` is active, and that touch a tensor
with ``requires_grad=True``, are appended to the tape together with a closure
computing the vector-Jacobian product.  ``Tape.gradient`` replays the records
backwards.  Outside a tape nothing is recorded, which is what inference uses.

Arrays of any rank are accepted; matrix products broadcast over leading
batch axes the way :func:`numpy.matmul` does.

Random initialisation uses :func:`numpy.random.default_rng` (PCG64 bit
generator seeded with the integer seed, values drawn with ``Generator.uniform``),
so another implementation reproducing PCG64 reproduces the streams.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyInput,
    NonFiniteEvaluation,
    NonPositiveScale,
)

__all__ = [
    "Tensor",
    "Tape",
    "as_tensor",
    "matmul",
    "softmax",
    "softmax_scaled",
    "log_softmax",
    "concat",
    "concat_rows",
    "take",
    "rms_norm",
    "relu",
    "detach",
    "finite_diff_grad",
    "seeded_init",
    "max_relative_error",
    "gradient_check",
]

_TAPES: list["Tape"] = []


class Tensor:
    """A float64 array with an optional place on the active tape."""

    __slots__ = ("value", "requires_grad", "name")
    __array_priority__ = 100.0

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.value.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def numpy(self) -> np.ndarray:
        return self.value

    # arithmetic -------------------------------------------------------------

    def __add__(self, other):
        return _add(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return _add(self, -as_tensor(other))

    def __rsub__(self, other):
        return _add(as_tensor(other), -self)

    def __neg__(self):
        return _record(-self.value, (self,), lambda g: (-g,))

    def __mul__(self, other):
        return _mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        if not other.requires_grad:
            return _mul(self, Tensor(1.0 / other.value))
        return _mul(self, other ** -1.0)

    def __pow__(self, p: float):
        x = self.value
        return _record(x**p, (self,), lambda g: (g * p * x ** (p - 1.0),))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(as_tensor(other), self)

    def __getitem__(self, idx):
        x = self.value
        out = x[idx]

        def backward(g):
            gx = np.zeros_like(x)
            np.add.at(gx, idx, g)
            return (gx,)

        return _record(np.array(out, dtype=np.float64), (self,), backward)

    # reductions and reshapes ------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        shape = self.value.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return _record(np.sum(self.value, axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.value.size if axis is None else np.prod(
            [self.value.shape[a] for a in np.atleast_1d(axis)]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def reshape(self, *shape):
        old = self.value.shape
        return _record(self.value.reshape(*shape), (self,), lambda g: (g.reshape(old),))

    @property
    def mT(self):
        """Swap the last two axes."""
        return _record(
            np.swapaxes(self.value, -1, -2), (self,), lambda g: (np.swapaxes(g, -1, -2),)
        )

    def exp(self):
        y = np.exp(self.value)
        return _record(y, (self,), lambda g: (g * y,))

    def log(self):
        x = self.value
        return _record(np.log(x), (self,), lambda g: (g / x,))


class _Record:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out, parents, backward):
        self.out = out
        self.parents = parents
        self.backward = backward


class Tape:
    """Ordered record of primitive operations.

    Use as a context manager; tapes nest, the innermost one records.
    """

    def __init__(self) -> None:
        self._records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self._records)

    def gradient(self, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradients of a scalar ``loss`` with respect to each of ``params``.

        Parameters without a path to ``loss`` get a zero array.
        """
        if loss.value.size != 1:
            raise DimensionMismatch(f"loss must be scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
        for rec in reversed(self._records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            for parent, pg in zip(rec.parents, rec.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                prev = grads.get(key)
                grads[key] = pg if prev is None else prev + pg
        out = []
        for p in params:
            g = grads.get(id(p))
            out.append(np.zeros_like(p.value) if g is None else np.asarray(g).reshape(p.shape))
        return out


def _record(value, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.value = value if isinstance(value, np.ndarray) else np.asarray(value, dtype=np.float64)
    out.requires_grad = False
    out.name = None
    if _TAPES and any(p.requires_grad for p in parents):
        out.requires_grad = True
        _TAPES[-1]._records.append(_Record(out, parents, backward))
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def detach(x: Tensor) -> Tensor:
    """Same value, cut from the tape."""
    return Tensor(as_tensor(x).value)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _add(a: Tensor, b: Tensor) -> Tensor:
    sa, sb = a.value.shape, b.value.shape
    return _record(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def _mul(a: Tensor, b: Tensor) -> Tensor:
    x, y = a.value, b.value
    return _record(
        x * y,
        (a, b),
        lambda g: (
            _unbroadcast(g * y, x.shape) if a.requires_grad else None,
            _unbroadcast(g * x, y.shape) if b.requires_grad else None,
        ),
    )


def matmul(a, b) -> Tensor:
    """Matrix product, batched over leading axes.

    Raises DimensionMismatch when the inner dimensions disagree.
    """
    a, b = as_tensor(a), as_tensor(b)
    x, y = a.value, b.value
    if x.ndim < 2 or y.ndim < 2:
        raise DimensionMismatch(f"matmul needs rank >= 2 operands, got {x.shape} and {y.shape}")
    if x.shape[-1] != y.shape[-2]:
        raise DimensionMismatch(f"cannot multiply {x.shape} by {y.shape}")

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            if x.ndim == 2 and g.ndim > 2 and y.ndim > 2:
                ga = np.einsum("...ij,...kj->ik", g, y)
            else:
                ga = _unbroadcast(g @ np.swapaxes(y, -1, -2), x.shape)
        if b.requires_grad:
            if y.ndim == 2 and x.ndim > 2:
                # shared weight: fold the batch axes into the row axis
                gb = x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(x, -1, -2) @ g, y.shape)
        return ga, gb

    return _record(x @ y, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    v = x.value
    on = v > 0
    return _record(np.where(on, v, 0.0), (x,), lambda g: (g * on,))


def softmax(x, axis: int = -1, scale: float = 1.0, mask=None, offset=None) -> Tensor:
    """Softmax of ``x / sqrt(scale) + offset`` along ``axis``.

    Entries where ``mask`` is False come out exactly 0.  A row with no
    unmasked entry is all zeros.  The row max is subtracted before
    exponentiation.
    """
    x = as_tensor(x)
    inv = 1.0 / math.sqrt(scale)
    z = x.value * inv
    if offset is not None:
        z = z + offset
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    m = np.max(z, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(z - m)
    s = np.sum(e, axis=axis, keepdims=True)
    y = np.divide(e, s, out=np.zeros_like(e), where=s > 0)

    def backward(g):
        return ((y * (g - np.sum(g * y, axis=axis, keepdims=True))) * inv,)

    return _record(y, (x,), backward)


def softmax_scaled(x, scale: float) -> Tensor:
    """``softmax(x / sqrt(scale))`` over a vector."""
    x = as_tensor(x)
    if x.value.size == 0:
        raise EmptyInput("softmax of an empty vector")
    if not scale > 0:
        raise NonPositiveScale(f"scale must be positive, got {scale}")
    return softmax(x, axis=-1, scale=scale)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.value
    m = np.max(z, axis=axis, keepdims=True)
    shifted = z - m
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def backward(g):
        return (g - p * np.sum(g, axis=axis, keepdims=True),)

    return _record(y, (x,), backward)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.value.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _record(np.concatenate([t.value for t in ts], axis=axis), tuple(ts), backward)


def concat_rows(a, b) -> Tensor:
    """Row-wise concatenation: row t of the result is row t of ``a`` then row t of ``b``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise DimensionMismatch(f"cannot concatenate rows of {a.shape} and {b.shape}")
    return concat([a, b], axis=1)


def take(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]`` (embedding gather)."""
    ids = np.asarray(ids, dtype=np.int64)
    tv = table.value

    def backward(g):
        gt = np.zeros_like(tv)
        np.add.at(gt, ids, g)
        return (gt,)

    return _record(tv[ids], (table,), backward)


def rms_norm(x: Tensor, gain: Tensor | None = None, eps: float = 1e-8) -> Tensor:
    """``x / (rms(x) + eps)`` over the last axis, optionally times ``gain``.

    A zero row maps to a zero row.
    """
    v = x.value
    n = v.shape[-1]
    r = np.sqrt(np.mean(v * v, axis=-1, keepdims=True))
    d = r + eps
    y = v / d
    safe_r = np.where(r > 0, r, 1.0)

    def norm_backward(g):
        dot = np.sum(g * v, axis=-1, keepdims=True)
        coef = np.where(r > 0, dot / (d * d * n * safe_r), 0.0)
        return (g / d - coef * v,)

    out = _record(y, (x,), norm_backward)
    if gain is None:
        return out
    return out * gain


def finite_diff_grad(f: Callable[[np.ndarray], float], x, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function at ``x``."""
    if not eps > 0:
        raise NonPositiveScale(f"eps must be positive, got {eps}")
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NonFiniteEvaluation(f"f is not finite near coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * eps)
    return grad.reshape(x.shape)


def seeded_init(shape, seed: int, scheme: str = "fan_in", bound: float = 0.1) -> np.ndarray:
    """Deterministic uniform initialisation.

    ``scheme="uniform"`` draws from U(-bound, bound); ``scheme="fan_in"``
    draws from U(-s, s) with ``s = 1/sqrt(shape[0])``.
    """
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if scheme == "uniform":
        s = float(bound)
    elif scheme == "fan_in":
        s = 1.0 / math.sqrt(shape[0])
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    return rng.uniform(-s, s, size=shape)


def max_relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    """Largest ``|a - n| / max(|a|, |n|, floor)`` over all entries."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def gradient_check(
    loss_fn: Callable[[], Tensor],
    params: Iterable[Tensor],
    eps: float = 1e-5,
    floor: float = 1e-6,
    analytic_hook: Callable[[np.ndarray], np.ndarray] | None = None,
) -> dict[str, float]:
    """Compare tape gradients of ``loss_fn()`` with central differences.

    ``loss_fn`` must rebuild the loss from the current values of ``params``.
    Returns the max relative error per parameter, keyed by name (or index).
    """
    params = list(params)
    with Tape() as tape:
        loss = loss_fn()
    analytic = tape.gradient(loss, params)
    if analytic_hook is not None:
        analytic = [analytic_hook(g) for g in analytic]
    report = {}
    for k, (p, ga) in enumerate(zip(params, analytic)):
        saved = p.value

        def f(v, p=p):
            p.value = v
            return float(loss_fn().value)

        try:
            gn = finite_diff_grad(f, saved.copy(), eps)
        finally:
            p.value = saved
        report[p.name or str(k)] = max_relative_error(ga, gn, floor)
    return report
