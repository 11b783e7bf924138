"""Minimal dense tensor engine with reverse-mode gradients.

Values are numpy arrays; every operation returns a new :class:`Tensor` that
records its parents and a closure computing the parents' gradient
contributions. Leading axes act as batch axes for the ops that need them
(batched matmul, row gathers, bias broadcasting); there is no general
broadcasting beyond that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import erf

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(FloatingPointError):
    """A computation produced non-finite values."""


class Tensor:
    """A node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward: Callable | None = None):
        self.data = np.asarray(data)
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def numpy(self) -> np.ndarray:
        return self.data

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other, self.data.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else np.float64)
    return Tensor(arr)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, copy=True), requires_grad=True, name=name)


def _node(data, parents: tuple, backward: Callable) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _parents=parents if needs else (),
                  _backward=backward if needs else None)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` over the leading axes that ``shape`` lacks or broadcast."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_trailing(a: Tensor, b: Tensor, op: str) -> None:
    # b may be a bias/row broadcast over a's leading axes
    if a.shape == b.shape:
        return
    try:
        out = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None
    if out != a.shape and out != b.shape:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.data.dtype)
    _check_trailing(a, b, "add")
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.data.dtype)
    _check_trailing(a, b, "sub")
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _node(out, (a, b), backward)


def mul(a, b) -> Tensor:
    """Elementwise product. ``b`` may be a python scalar or a constant array."""
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = np.asarray(b, dtype=a.data.dtype)
        out = a.data * c
        return _node(out, (a,), lambda g: (_unbroadcast(g * c, a.shape),))
    _check_trailing(a, b, "mul")
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(out, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_trailing(a, b, "div")
    out = a.data / b.data

    def backward(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(out, (a, b), backward)


def square(x: Tensor) -> Tensor:
    return _node(x.data * x.data, (x,), lambda g: (2.0 * x.data * g,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _node(out, (x,), lambda g: (0.5 * g / out,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return _node(np.log(x.data), (x,), lambda g: (g / x.data,))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _node(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the erf-based normal CDF."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    out = x.data * cdf

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return _node(out, (x,), backward)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(out, (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def logsumexp(x: Tensor, exclude: np.ndarray | None = None) -> Tensor:
    """Stable log-sum-exp over the last axis; ``exclude`` drops entries."""
    data = x.data if exclude is None else np.where(exclude, -np.inf, x.data)
    m = np.max(data, axis=-1, keepdims=True)
    e = np.exp(data - m)
    s = e.sum(axis=-1, keepdims=True)
    out = (np.log(s) + m)[..., 0]

    def backward(g):
        return (g[..., None] * (e / s),)

    return _node(out, (x,), backward)


# ---------------------------------------------------------------------------
# linear algebra and shape
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; ``b`` may be an unbatched 2-D weight."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2 and a.ndim > 2:
            a2 = a.data.reshape(-1, a.shape[-1])
            gb = a2.T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return _unbroadcast(ga, a.shape), gb

    return _node(out, (a, b), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def swapaxes(x: Tensor, a1: int, a2: int) -> Tensor:
    return _node(np.swapaxes(x.data, a1, a2), (x,), lambda g: (np.swapaxes(g, a1, a2),))


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    out = np.concatenate([x.data for x in xs], axis=axis)
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tuple(xs), backward)


def broadcast_rows(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Broadcast ``x`` (trailing-aligned) up to ``shape``."""
    out = np.broadcast_to(x.data, tuple(shape)).copy()
    return _node(out, (x,), lambda g: (_unbroadcast(g, x.shape),))


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Select rows along the second-to-last axis.

    With ``x`` of shape ``(N, d)`` and integer ``index`` of any shape ``S``
    the result is ``(*S, d)``. With batched ``x`` of shape ``(B, N, d)`` and
    ``index`` of shape ``(B, T)`` row ``t`` of batch ``b`` is ``x[b, index[b, t]]``.
    """
    index = np.asarray(index, dtype=np.intp)
    if x.ndim == 2:
        n = x.shape[0]
        if index.size and (index.min() < 0 or index.max() >= n):
            raise IndexError(f"gather_rows: index out of range for {n} rows")
        out = x.data[index]

        def backward(g):
            gx = np.zeros_like(x.data)
            np.add.at(gx, index.reshape(-1), g.reshape(-1, x.shape[-1]))
            return (gx,)

        return _node(out, (x,), backward)
    if x.ndim != 3 or index.ndim != 2 or index.shape[0] != x.shape[0]:
        raise DimensionError(f"gather_rows: bad shapes {x.shape} / {index.shape}")
    n = x.shape[1]
    if index.size and (index.min() < 0 or index.max() >= n):
        raise IndexError(f"gather_rows: index out of range for {n} rows")
    bidx = np.arange(x.shape[0])[:, None]
    out = x.data[bidx, index]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (np.broadcast_to(bidx, index.shape), index), g)
        return (gx,)

    return _node(out, (x,), backward)


# ---------------------------------------------------------------------------
# normalizations
# ---------------------------------------------------------------------------

def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis with per-row max subtraction."""
    z = x.data - np.max(x.data, axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=-1, keepdims=True)),)

    return _node(out, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row to zero mean / unit variance, then ``gain * y + bias``."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out = y * gain.data + bias.data

    def backward(g):
        gy = g * gain.data
        d = x.shape[-1]
        gx = inv / d * (d * gy - gy.sum(axis=-1, keepdims=True)
                        - y * np.sum(gy * y, axis=-1, keepdims=True))
        return gx, _unbroadcast(g * y, gain.shape), _unbroadcast(g, bias.shape)

    return _node(out, (x, gain, bias), backward)


def l2_normalize_rows(x: Tensor, min_norm: float = 1e-12) -> Tensor:
    """Scale each row to unit Euclidean norm."""
    norm = np.sqrt(np.sum(x.data * x.data, axis=-1, keepdims=True))
    if np.any(norm < min_norm):
        raise NumericError("l2_normalize_rows: row norm below %g" % min_norm)
    out = x.data / norm

    def backward(g):
        return ((g - out * np.sum(g * out, axis=-1, keepdims=True)) / norm,)

    return _node(out, (x,), backward)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------

def topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Mapping[str, Tensor] | None = None) -> dict[str, np.ndarray]:
    """Accumulate d(loss)/d(node) into ``.grad`` for every node reachable from ``loss``.

    Returns a gradient per entry of ``params`` (zeros for parameters that do
    not influence the loss).
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    order = topological_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if not parent.requires_grad:
                continue
            # never accumulate in place: g may alias another node's gradient
            parent.grad = g if parent.grad is None else parent.grad + g
    if params is None:
        return {}
    return {k: (np.asarray(p.grad, dtype=p.data.dtype) if p.grad is not None
                else np.zeros_like(p.data))
            for k, p in params.items()}


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    per_param: dict[str, float]
    checked: int
    passed: bool


def rel_error(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(1e-8, np.maximum(np.abs(a), np.abs(b)))


def finite_diff_check(f: Callable[[Mapping[str, np.ndarray]], float],
                      params: Mapping[str, np.ndarray],
                      analytic: Mapping[str, np.ndarray],
                      step: float = 1e-5, tol: float = 1e-4,
                      max_coords: int | None = 64,
                      rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare ``analytic`` gradients with central differences of ``f``.

    ``f`` receives the (mutated in place) parameter arrays and returns a float.
    At most ``max_coords`` coordinates per tensor are probed (all of them when
    the tensor is smaller or ``max_coords`` is None).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    rng = rng or np.random.default_rng(0)
    worst = (0.0, "", ())
    per_param: dict[str, float] = {}
    checked = 0
    for name, arr in params.items():
        flat = arr.reshape(-1)
        n = flat.size
        if max_coords is None or n <= max_coords:
            coords = np.arange(n)
        else:
            coords = np.sort(rng.choice(n, size=max_coords, replace=False))
        ga = np.asarray(analytic[name]).reshape(-1)
        err_max = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            fp = f(params)
            flat[c] = orig - step
            fm = f(params)
            flat[c] = orig
            num = (fp - fm) / (2.0 * step)
            err = float(rel_error(ga[c], num))
            checked += 1
            if err > err_max:
                err_max = err
            if err > worst[0]:
                worst = (err, name, np.unravel_index(c, arr.shape))
        per_param[name] = err_max
    return GradCheckReport(worst[0], worst[1], tuple(int(i) for i in worst[2]),
                           per_param, checked, passed=worst[0] < tol)


def check_finite(x: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {where}")
