"""Dense float64 tensors with a reverse-mode tape and an Adam optimizer.

Only what the classifier stack needs is here: matrix products, bias
addition, ReLU, row-wise log-softmax, a few reductions and the two losses.
Every op records a closure on its output; ``backward`` walks the graph in
reverse topological order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"non-finite values produced by {what}")


class Tensor:
    """A float64 array that can take part in reverse-mode differentiation."""

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, values, requires_grad: bool = False, *, _parents=(), _op: str = "leaf"):
        self.values = np.array(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = tuple(_parents)
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = _op
        self._consumed = False
        _check_finite(self.values, _op)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"expected a single-element tensor, got shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.values

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_lift(other), -1.0))

    def __rsub__(self, other):
        return add(_lift(other), scale(self, -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _lift(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(values: np.ndarray, parents: Sequence[Tensor], op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(values, requires_grad=needs, _parents=parents if needs else (), _op=op)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = _result(a.values @ b.values, (a, b), "matmul")
    if out.requires_grad:

        def _bw(g):
            _accumulate(a, g @ b.values.T)
            _accumulate(b, a.values.T @ g)

        out._backward = _bw
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a bias broadcast along the last axis or a scalar."""
    if a.shape == b.shape:
        kind = "same"
    elif b.ndim == 1 and a.ndim == 2 and b.shape[0] == a.shape[1]:
        kind = "bias"
    elif b.values.size == 1 and b.ndim == 0:
        kind = "scalar"
    else:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")
    out = _result(a.values + b.values, (a, b), "add")
    if out.requires_grad:

        def _bw(g):
            _accumulate(a, g)
            if kind == "same":
                _accumulate(b, g)
            elif kind == "bias":
                _accumulate(b, g.sum(axis=0))
            else:
                _accumulate(b, np.asarray(g.sum()))

        out._backward = _bw
    return out


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    if b.ndim != 1 or w.ndim != 2 or b.shape[0] != w.shape[1]:
        raise ShapeError(f"affine: bias {b.shape} does not match weight {w.shape}")
    return add(matmul(x, w), b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes differ {a.shape} vs {b.shape}")
    out = _result(a.values * b.values, (a, b), "mul")
    if out.requires_grad:

        def _bw(g):
            _accumulate(a, g * b.values)
            _accumulate(b, g * a.values)

        out._backward = _bw
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = _result(a.values * c, (a,), "scale")
    if out.requires_grad:
        out._backward = lambda g: _accumulate(a, g * c)
    return out


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0
    out = _result(np.where(mask, x.values, 0.0), (x,), "relu")
    if out.requires_grad:
        out._backward = lambda g: _accumulate(x, g * mask)
    return out


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.values)
    out = _result(e, (x,), "exp")
    if out.requires_grad:
        out._backward = lambda g: _accumulate(x, g * e)
    return out


def log_softmax(x: Tensor) -> Tensor:
    if x.ndim != 2 or x.shape[1] < 1:
        raise ShapeError(f"log_softmax expects an m x c matrix, got {x.shape}")
    shifted = x.values - x.values.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    values = shifted - lse
    out = _result(values, (x,), "log_softmax")
    if out.requires_grad:
        probs = np.exp(values)

        def _bw(g):
            _accumulate(x, g - probs * g.sum(axis=1, keepdims=True))

        out._backward = _bw
    return out


def softmax(x: Tensor) -> Tensor:
    return exp(log_softmax(x))


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    out = _result(np.asarray(x.values.sum()), (x,), "sum")
    if out.requires_grad:
        out._backward = lambda g: _accumulate(x, np.full(x.shape, float(g)))
    return out


def mean(x: Tensor) -> Tensor:
    n = x.values.size
    if n == 0:
        raise ShapeError("mean of an empty tensor")
    return scale(sum(x), 1.0 / n)


def row_dot(x: Tensor, w: Tensor) -> Tensor:
    """``x @ w`` for an m x d matrix and a length-d vector, giving length m."""
    if x.ndim != 2 or w.ndim != 1 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"row_dot: {x.shape} against {w.shape}")
    out = _result(x.values @ w.values, (x, w), "row_dot")
    if out.requires_grad:

        def _bw(g):
            _accumulate(x, np.outer(g, w.values))
            _accumulate(w, x.values.T @ g)

        out._backward = _bw
    return out


def pick(x: Tensor, index: Sequence[int]) -> Tensor:
    """Select ``x[i, index[i]]`` for every row, giving a length-m vector."""
    idx = np.asarray(index, dtype=np.int64)
    if x.ndim != 2 or idx.shape != (x.shape[0],):
        raise ShapeError(f"pick: {len(idx)} indices for a {x.shape} matrix")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[1]):
        raise IndexError(f"pick: index outside [0, {x.shape[1]})")
    rows = np.arange(x.shape[0])
    out = _result(x.values[rows, idx], (x,), "pick")
    if out.requires_grad:

        def _bw(g):
            full = np.zeros(x.shape)
            full[rows, idx] = g
            _accumulate(x, full)

        out._backward = _bw
    return out


def take_rows(x: Tensor, rows: Sequence[int]) -> Tensor:
    idx = np.asarray(rows, dtype=np.int64)
    out = _result(x.values[idx], (x,), "take_rows")
    if out.requires_grad:

        def _bw(g):
            full = np.zeros(x.shape)
            np.add.at(full, idx, g)
            _accumulate(x, full)

        out._backward = _bw
    return out


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Stack tensors along the first axis."""
    if not parts:
        raise ShapeError("concat of nothing")
    tail = parts[0].shape[1:]
    if any(p.shape[1:] != tail for p in parts):
        raise ShapeError("concat: trailing shapes differ")
    sizes = [p.shape[0] for p in parts]
    out = _result(np.concatenate([p.values for p in parts], axis=0), tuple(parts), "concat")
    if out.requires_grad:

        def _bw(g):
            start = 0
            for p, n in zip(parts, sizes):
                _accumulate(p, g[start : start + n])
                start += n

        out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# losses


def nll_loss(log_probs: Tensor, labels: Sequence[int]) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    if log_probs.ndim != 2 or labels.shape != (log_probs.shape[0],):
        raise ShapeError(f"nll_loss: {labels.shape} labels for {log_probs.shape} log-probs")
    c = log_probs.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"nll_loss: label outside [0, {c})")
    return scale(mean(pick(log_probs, labels)), -1.0)


def logistic_loss(score: Tensor, label: Sequence[float]) -> Tensor:
    """Mean of ``log(1 + exp(-label * score))`` for labels in {-1, +1}."""
    y = np.asarray(label, dtype=np.float64)
    if score.ndim != 1 or y.shape != score.shape:
        raise ShapeError(f"logistic_loss: {y.shape} labels for {score.shape} scores")
    if not np.all(np.abs(y) == 1.0):
        raise ValueError("logistic_loss labels must be +1 or -1")
    margin = -y * score.values
    losses = np.logaddexp(0.0, margin)
    out = _result(np.asarray(losses.mean()), (score,), "logistic_loss")
    if out.requires_grad:
        # d/ds log(1+exp(-ys)) = -y * sigmoid(-ys)
        sig = np.exp(-np.logaddexp(0.0, -margin))

        def _bw(g):
            _accumulate(score, float(g) * (-y * sig) / y.size)

        out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# backward pass


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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every ``requires_grad`` ancestor of a scalar loss.

    The graph is released afterwards, so a second call on the same loss
    raises instead of silently doubling gradients.
    """
    if loss.values.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise RuntimeError("backward already ran on this graph; rebuild the loss first")
    if not loss.requires_grad:
        loss._consumed = True
        return
    order = _topological(loss)
    loss.grad = np.ones_like(loss.values)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            _check_finite(node.grad, f"backward of {node._op}")
            node._backward(node.grad)
    # release the graph; leaves keep their grad
    for node in order:
        if node._parents:
            node._parents = ()
            node._backward = None
            if node is not loss:
                node.grad = None
    loss._consumed = True


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: AdamState) -> None:
    """Decoupled weight decay followed by a bias-corrected Adam update, in place.

    Missing gradients count as zero so the moment estimates stay aligned with
    the step counter.
    """
    if not state.m:
        state.m = [np.zeros(p.shape) for p in params]
        state.v = [np.zeros(p.shape) for p in params]
    if len(state.m) != len(params) or len(grads) != len(params):
        raise ShapeError("adam_step: parameter, gradient and state counts differ")
    state.t += 1
    lr, b1, b2 = state.learning_rate, state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != state.m[i].shape:
            raise ShapeError(f"adam_step: parameter {i} has shape {p.shape}, state has {state.m[i].shape}")
        g = np.zeros(p.shape) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: gradient {i} has shape {g.shape}, parameter has {p.shape}")
        if state.weight_decay:
            p.values -= lr * state.weight_decay * p.values
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        p.values -= lr * (state.m[i] / c1) / (np.sqrt(state.v[i] / c2) + state.epsilon)
        _check_finite(p.values, "adam_step")


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
