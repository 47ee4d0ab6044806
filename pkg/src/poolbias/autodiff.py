"""Tape-based reverse-mode differentiation over small dense float64 matrices.

Every value is a 2-D array; vectors are column vectors of shape (n, 1) and
scalars are (1, 1).  There is no broadcasting apart from ``scale`` (tensor
times a Python float).  Each primitive records its parents plus a closure
mapping the upstream gradient to one gradient per parent.

Gradients are accumulated into ``.grad`` of *leaf* tensors only, so calling
``backward`` twice on the same loss doubles the leaf gradients.  Call
``zero_grad`` between steps.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import InvalidArgument


class Tensor:
    __slots__ = ("value", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, value, requires_grad: bool = False, *, _parents=(), _backward=None, op="leaf"):
        arr = np.array(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        elif arr.ndim != 2:
            raise InvalidArgument(f"tensors are at most 2-D, got shape {arr.shape}")
        self.value = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr)
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        if self.shape != (1, 1):
            raise InvalidArgument(f"item() needs a scalar, shape is {self.shape}")
        return float(self.value[0, 0])

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"


def constant(value) -> Tensor:
    return Tensor(value, requires_grad=False)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, rule, op) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(value, op=op)
    return Tensor(value, True, _parents=tuple(parents), _backward=rule, op=op)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise InvalidArgument(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- primitives -------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise InvalidArgument(f"matmul: inner dimensions differ {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return _node(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "add")
    return _node(a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "sub")
    return _node(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _node(a.value * c, (a,), lambda g: (g * c,), "scale")


def hadamard(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "hadamard")
    av, bv = a.value, b.value
    return _node(av * bv, (a, b), lambda g: (g * bv, g * av), "hadamard")


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    return _node(a.value.T.copy(), (a,), lambda g: (g.T,), "transpose")


def reshape(a, shape: tuple[int, int]) -> Tensor:
    """Row-major reshape."""
    a = _as_tensor(a)
    old = a.shape
    if int(np.prod(shape)) != a.value.size:
        raise InvalidArgument(f"reshape: cannot view {old} as {shape}")
    return _node(a.value.reshape(shape).copy(), (a,), lambda g: (g.reshape(old),), "reshape")


def column(a, j: int) -> Tensor:
    """Column ``j`` of a matrix as an (n, 1) tensor."""
    a = _as_tensor(a)
    shape = a.shape

    def rule(g):
        out = np.zeros(shape)
        out[:, j] = g[:, 0]
        return (out,)

    return _node(a.value[:, j:j + 1].copy(), (a,), rule, "column")


def row_sum(a) -> Tensor:
    """Sum of the rows of an (n, d) matrix, returned as a (d, 1) column."""
    a = _as_tensor(a)
    n = a.shape[0]
    out = a.value.sum(axis=0).reshape(-1, 1)
    return _node(out, (a,), lambda g: (np.repeat(g.T, n, axis=0),), "row_sum")


def row_mean(a) -> Tensor:
    """Mean of the rows of an (n, d) matrix, returned as a (d, 1) column."""
    a = _as_tensor(a)
    n = a.shape[0]
    out = a.value.mean(axis=0).reshape(-1, 1)
    return _node(out, (a,), lambda g: (np.repeat(g.T / n, n, axis=0),), "row_mean")


def row_max(a) -> Tensor:
    """Coordinate-wise max over rows, (d, 1).  Ties route gradient to the first row."""
    a = _as_tensor(a)
    idx = np.argmax(a.value, axis=0)
    cols = np.arange(a.shape[1])
    out = a.value[idx, cols].reshape(-1, 1)
    shape = a.shape

    def rule(g):
        ga = np.zeros(shape)
        ga[idx, cols] = g[:, 0]
        return (ga,)

    return _node(out, (a,), rule, "row_max")


def dot(u, v) -> Tensor:
    u, v = _as_tensor(u), _as_tensor(v)
    if u.shape[1] != 1 or u.shape != v.shape:
        raise InvalidArgument(f"dot: expected equal column vectors, got {u.shape}, {v.shape}")
    uv, vv = u.value, v.value
    out = np.array([[float(uv[:, 0] @ vv[:, 0])]])
    return _node(out, (u, v), lambda g: (g[0, 0] * vv, g[0, 0] * uv), "dot")


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    s = expit(x.value)
    return _node(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = (x.value > 0).astype(np.float64)
    return _node(x.value * mask, (x,), lambda g: (g * mask,), "relu")


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = _as_tensor(x)
    factor = np.where(x.value > 0, 1.0, float(slope))
    return _node(x.value * factor, (x,), lambda g: (g * factor,), "leaky_relu")


def identity(x) -> Tensor:
    return _as_tensor(x)


def _softmax_col(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax_beta(scores, beta: float = 1.0) -> Tensor:
    """Softmax of ``scores / beta`` over an (n, 1) column, max-shifted."""
    scores = _as_tensor(scores)
    beta = float(beta)
    if not beta > 0:
        raise InvalidArgument(f"temperature must be positive, got {beta}")
    if scores.shape[1] != 1:
        raise InvalidArgument(f"softmax_beta expects a column vector, got {scores.shape}")
    alpha = _softmax_col(scores.value / beta)

    def rule(g):
        return (alpha * (g - float(alpha[:, 0] @ g[:, 0])) / beta,)

    return _node(alpha, (scores,), rule, "softmax_beta")


def softmax_pool(x, scores, beta: float = 1.0) -> Tensor:
    """Rows of ``x`` (n, d) averaged with softmax(scores / beta) weights, as a (d, 1) column.

    Normalizes after summing, so equal scores give exactly the row mean.
    """
    x, scores = _as_tensor(x), _as_tensor(scores)
    beta = float(beta)
    if not beta > 0:
        raise InvalidArgument(f"temperature must be positive, got {beta}")
    if scores.shape != (x.shape[0], 1):
        raise InvalidArgument(f"softmax_pool: scores {scores.shape} do not match rows of {x.shape}")
    z = scores.value / beta
    e = np.exp(z - z.max())
    total = float(e.sum())
    out = (x.value.T @ e) / total
    alpha = e / total

    def rule(g):
        return alpha @ g.T, alpha * ((x.value - out.T) @ g) / beta

    return _node(out, (x, scores), rule, "softmax_pool")


def log1p_exp(x) -> Tensor:
    """log(1 + exp(x)) elementwise, stable for large |x|."""
    x = _as_tensor(x)
    out = np.logaddexp(0.0, x.value)
    s = expit(x.value)
    return _node(out, (x,), lambda g: (g * s,), "log1p_exp")


def outer_add(u, v) -> Tensor:
    """(n, m) matrix with entries u_i + v_j for columns u (n, 1), v (m, 1)."""
    u, v = _as_tensor(u), _as_tensor(v)
    if u.shape[1] != 1 or v.shape[1] != 1:
        raise InvalidArgument("outer_add expects column vectors")
    out = u.value + v.value.T
    return _node(out, (u, v), lambda g: (g.sum(axis=1, keepdims=True), g.sum(axis=0).reshape(-1, 1)),
                 "outer_add")


def masked_softmax_rows(e, mask: np.ndarray) -> Tensor:
    """Row-wise softmax restricted to entries where ``mask`` is nonzero.

    Every row of ``mask`` must have at least one nonzero entry.
    """
    e = _as_tensor(e)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != e.shape:
        raise InvalidArgument(f"mask shape {mask.shape} does not match {e.shape}")
    if not mask.any(axis=1).all():
        raise InvalidArgument("every row needs at least one unmasked entry")
    z = np.where(mask, e.value, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    w = np.where(mask, np.exp(z), 0.0)
    w /= w.sum(axis=1, keepdims=True)

    def rule(g):
        inner = (w * g).sum(axis=1, keepdims=True)
        return (w * (g - inner),)

    return _node(w, (e,), rule, "masked_softmax_rows")


# -- reverse sweep ----------------------------------------------------------


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every leaf tensor with requires_grad."""
    if loss.shape != (1, 1):
        raise InvalidArgument(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def finite_diff_grad(f: Callable[[], float], params: Sequence[Tensor], h: float = 1e-5) -> list[np.ndarray]:
    """Central differences of ``f()`` with respect to each entry of ``params``.

    ``f`` must rebuild its computation from the current ``param.value``
    arrays; entries are perturbed in place and restored afterwards.
    """
    if not h > 0:
        raise InvalidArgument("step h must be positive")
    out = []
    for p in params:
        grad = np.zeros_like(p.value)
        flat = p.value.reshape(-1)
        gflat = grad.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            fp = f()
            flat[k] = orig - h
            fm = f()
            flat[k] = orig
            gflat[k] = (fp - fm) / (2.0 * h)
        out.append(grad)
    return out
