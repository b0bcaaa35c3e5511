"""Minimal reverse-mode autodiff kernel over dense float64 matrices.

Everything is a 2-D array: vectors are 1 x n rows. Supported broadcasting is
deliberately narrow -- a 1 x c row against an r x c matrix (bias-add style)
and python scalars -- so every gradient path stays auditable.

A :class:`Tape` records operations as they execute; :meth:`Tape.backward`
replays them in reverse and deposits gradients into the :class:`Param`
leaves. Tapes are single-use: a second backward call raises.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .errors import DimensionError, TapeError

LOG_2PI = math.log(2.0 * math.pi)


def as_matrix(x) -> np.ndarray:
    """Coerce to a C-contiguous float64 2-D array; 1-D input becomes a row."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise DimensionError(f"expected a matrix (2-D), got ndim={a.ndim}")
    return np.ascontiguousarray(a)


def softmax_row(logits) -> np.ndarray:
    """Stable softmax of a length-K vector (max-subtracted)."""
    v = np.asarray(logits, dtype=np.float64).reshape(-1)
    e = np.exp(v - v.max())
    return e / e.sum()


def log_sum_exp(terms) -> float:
    """log(sum(exp(terms))) with max-subtraction; exact for a single term.

    All terms -inf returns -inf (zero total mass; callers must handle).
    """
    v = np.asarray(terms, dtype=np.float64).reshape(-1)
    m = v.max()
    if v.size == 1:
        return float(v[0])
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.exp(v - m).sum()))


class Param:
    """A trainable leaf: a value matrix plus a same-shaped gradient buffer."""

    __slots__ = ("value", "grad", "name")

    def __init__(self, value, name: str = ""):
        self.value = as_matrix(value).copy()
        self.grad = np.zeros_like(self.value)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Param({self.name or 'unnamed'}, shape={self.value.shape})"


class Node:
    """A recorded intermediate value on a tape."""

    # keep numpy from hijacking reflected arithmetic with Node operands
    __array_ufunc__ = None

    __slots__ = ("tape", "index", "value", "parents", "n_consumers")

    def __init__(self, tape: "Tape", index: int, value: np.ndarray, parents):
        self.tape = tape
        self.index = index
        self.value = value
        self.parents = parents  # tuple of (Node, vjp) pairs
        self.n_consumers = 0
        for parent, _ in parents:
            parent.n_consumers += 1

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Records a forward computation and runs one reverse sweep over it."""

    def __init__(self):
        self._nodes: list[Node] = []
        self._leaves: dict[int, tuple[Param, Node]] = {}
        self._used = False

    def _record(self, value: np.ndarray, parents) -> Node:
        node = Node(self, len(self._nodes), value, parents)
        self._nodes.append(node)
        return node

    def constant(self, array) -> Node:
        return self._record(as_matrix(array), ())

    def leaf(self, param: Param) -> Node:
        """Register a Param on this tape (idempotent per tape)."""
        entry = self._leaves.get(id(param))
        if entry is None:
            node = self._record(param.value, ())
            self._leaves[id(param)] = (param, node)
            return node
        return entry[1]

    def backward(self, loss: Node):
        """Populate .grad of every reachable Param with d(loss)/d(param).

        loss must be 1x1. Grads of all tape-registered Params are zeroed
        first; Params never used on this tape are untouched.
        """
        if self._used:
            raise TapeError("backward was already called on this tape")
        if loss.tape is not self:
            raise TapeError("loss node belongs to a different tape")
        if loss.shape != (1, 1):
            raise TapeError(f"loss must be a 1x1 scalar node, got shape {loss.shape}")
        self._used = True

        adjoints: list[np.ndarray | None] = [None] * len(self._nodes)
        adjoints[loss.index] = np.ones((1, 1))
        for i in range(loss.index, -1, -1):
            g = adjoints[i]
            if g is None:
                continue
            for parent, vjp in self._nodes[i].parents:
                contrib = vjp(g)
                prev = adjoints[parent.index]
                if prev is None:
                    # single-consumer adjoints are never mutated, so the
                    # vjp output can be used as-is (it may alias g)
                    if parent.n_consumers > 1:
                        contrib = np.array(contrib)
                    adjoints[parent.index] = contrib
                else:
                    prev += contrib

        for param, node in self._leaves.values():
            param.grad[...] = 0.0
            g = adjoints[node.index]
            if g is not None:
                param.grad += g


def _tape_of(*operands) -> Tape:
    tape = None
    for x in operands:
        if isinstance(x, Node):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise TapeError("operands come from different tapes")
    if tape is None:
        raise TapeError("at least one operand must be a tape node")
    return tape


def _wrap(tape: Tape, x) -> Node:
    return x if isinstance(x, Node) else tape.constant(x)


def _broadcast_pair(a: Node, b: Node, opname: str):
    """Classify the (a, b) shapes: 'same', 'a_row' (a is 1 x c), or 'b_row'."""
    sa, sb = a.shape, b.shape
    if sa == sb:
        return "same"
    if sa[1] == sb[1]:
        if sa[0] == 1:
            return "a_row"
        if sb[0] == 1:
            return "b_row"
    raise DimensionError(f"{opname}: incompatible shapes {sa} and {sb}")


def add(a, b):
    if not isinstance(a, Node) and not isinstance(b, Node):
        raise TapeError("add requires at least one tape node")
    if isinstance(b, (int, float)) or (np.isscalar(b) and not isinstance(b, Node)):
        return add_scalar(a, float(b))
    if isinstance(a, (int, float)) or (np.isscalar(a) and not isinstance(a, Node)):
        return add_scalar(b, float(a))
    tape = _tape_of(a, b)
    a, b = _wrap(tape, a), _wrap(tape, b)
    kind = _broadcast_pair(a, b, "add")
    value = a.value + b.value
    if kind == "same":
        parents = ((a, lambda g: g), (b, lambda g: g))
    elif kind == "a_row":
        parents = ((a, lambda g: g.sum(axis=0, keepdims=True)), (b, lambda g: g))
    else:
        parents = ((a, lambda g: g), (b, lambda g: g.sum(axis=0, keepdims=True)))
    return tape._record(value, parents)


def sub(a, b):
    if isinstance(b, (int, float)) and not isinstance(b, Node):
        return add_scalar(a, -float(b))
    if isinstance(a, (int, float)) and not isinstance(a, Node):
        return add_scalar(scale(b, -1.0), float(a))
    tape = _tape_of(a, b)
    a, b = _wrap(tape, a), _wrap(tape, b)
    kind = _broadcast_pair(a, b, "sub")
    value = a.value - b.value
    if kind == "same":
        parents = ((a, lambda g: g), (b, lambda g: -g))
    elif kind == "a_row":
        parents = ((a, lambda g: g.sum(axis=0, keepdims=True)), (b, lambda g: -g))
    else:
        parents = ((a, lambda g: g), (b, lambda g: -g.sum(axis=0, keepdims=True)))
    return tape._record(value, parents)


def mul(a, b):
    """Elementwise product; one side may be a 1 x c row against r x c."""
    if isinstance(b, (int, float)) and not isinstance(b, Node):
        return scale(a, float(b))
    if isinstance(a, (int, float)) and not isinstance(a, Node):
        return scale(b, float(a))
    tape = _tape_of(a, b)
    a, b = _wrap(tape, a), _wrap(tape, b)
    kind = _broadcast_pair(a, b, "mul")
    av, bv = a.value, b.value
    value = av * bv
    if kind == "same":
        parents = ((a, lambda g: g * bv), (b, lambda g: g * av))
    elif kind == "a_row":
        parents = (
            (a, lambda g: (g * bv).sum(axis=0, keepdims=True)),
            (b, lambda g: g * av),
        )
    else:
        parents = (
            (a, lambda g: g * bv),
            (b, lambda g: (g * av).sum(axis=0, keepdims=True)),
        )
    return tape._record(value, parents)


def scale(x: Node, c: float):
    c = float(c)
    return x.tape._record(x.value * c, ((x, lambda g: g * c),))


def add_scalar(x: Node, c: float):
    c = float(c)
    return x.tape._record(x.value + c, ((x, lambda g: g),))


def matmul(a, b):
    tape = _tape_of(a, b)
    a, b = _wrap(tape, a), _wrap(tape, b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul: inner dimensions differ, {a.shape} @ {b.shape}"
        )
    av, bv = a.value, b.value
    value = av @ bv
    parents = ((a, lambda g: g @ bv.T), (b, lambda g: av.T @ g))
    return tape._record(value, parents)


def tanh(x: Node):
    y = np.tanh(x.value)
    return x.tape._record(y, ((x, lambda g: g * (1.0 - y * y)),))


def exp(x: Node):
    y = np.exp(x.value)
    return x.tape._record(y, ((x, lambda g: g * y),))


def square(x: Node):
    xv = x.value
    return x.tape._record(xv * xv, ((x, lambda g: g * (2.0 * xv)),))


def sum_all(x: Node):
    """Sum of all entries as a 1x1 node."""
    xv = x.value
    value = np.array([[xv.sum()]])
    return x.tape._record(value, ((x, lambda g: np.full_like(xv, g[0, 0])),))


def logsumexp_rows(x: Node):
    """Row-wise log(sum(exp(.))): (r x c) -> (r x 1), max-subtracted."""
    xv = x.value
    m = xv.max(axis=1, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    y = m_safe + np.log(np.exp(xv - m_safe).sum(axis=1, keepdims=True))
    y = np.where(np.isfinite(m), y, m)
    soft = np.exp(xv - np.where(np.isfinite(y), y, 0.0))
    return x.tape._record(y, ((x, lambda g: g * soft),))


def tile_cols(x: Node, k: int):
    """Repeat an (r x 1) column k times to (r x k)."""
    if x.shape[1] != 1:
        raise DimensionError(f"tile_cols expects an r x 1 column, got {x.shape}")
    value = np.repeat(x.value, k, axis=1)
    return x.tape._record(value, ((x, lambda g: g.sum(axis=1, keepdims=True)),))


def row(x: Node, j: int):
    """Row j as a 1 x c node."""
    xv = x.value
    if not 0 <= j < xv.shape[0]:
        raise DimensionError(f"row index {j} out of range for shape {x.shape}")

    def vjp(g):
        out = np.zeros_like(xv)
        out[j, :] = g[0, :]
        return out

    return x.tape._record(xv[j : j + 1, :].copy(), ((x, vjp),))


def col(x: Node, j: int):
    """Column j as an r x 1 node."""
    xv = x.value
    if not 0 <= j < xv.shape[1]:
        raise DimensionError(f"column index {j} out of range for shape {x.shape}")

    def vjp(g):
        out = np.zeros_like(xv)
        out[:, j] = g[:, 0]
        return out

    return x.tape._record(xv[:, j : j + 1].copy(), ((x, vjp),))
