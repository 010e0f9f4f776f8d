"""Small reverse-mode autodiff over dense 1-D and 2-D float64 arrays.

Every op output is appended to a :class:`Tape` in creation order and
:func:`backward` walks that list in reverse, so each node is visited once.
The graph is rebuilt on every forward pass.

>>> x = Node([3.0, 4.0], requires_grad=True)
>>> loss = op_reduce("l2norm", x)
>>> backward(loss)
>>> x.grad
array([0.6, 0.8])
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np


class DimensionError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class Tensor:
    """Immutable, finite float64 array of rank 1 (vector) or 2 (matrix)."""

    __slots__ = ("data",)

    def __init__(self, data) -> None:
        arr = np.array(data, dtype=np.float64)
        self.data = self._check(arr)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # no copy: caller hands over a freshly computed array
        t = cls.__new__(cls)
        t.data = cls._check(np.asarray(arr, dtype=np.float64))
        return t

    @staticmethod
    def _check(arr: np.ndarray) -> np.ndarray:
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.ndim > 2:
            raise DimensionError(f"rank {arr.ndim} tensors are not supported")
        if not np.isfinite(arr).all():
            raise FloatingPointError("tensor contains NaN or Inf")
        arr.setflags(write=False)
        return arr

    @property
    def shape(self) -> tuple[int, int]:
        if self.data.ndim == 1:
            return (self.data.shape[0], 1)
        return self.data.shape  # type: ignore[return-value]

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, data={self.data!r})"


class Tape:
    """Op outputs in creation order; consumed once by :func:`backward`."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.leaves: list[Node] = []
        self.used = False

    def record(self, node: "Node") -> None:
        node.tape = self
        self.nodes.append(node)

    def adopt(self, leaf: "Node") -> None:
        leaf.tape = self
        self.leaves.append(leaf)

    def reset(self) -> None:
        """Zero every gradient on the tape so backward may run again."""
        for node in self.nodes:
            node._grad = None
        for leaf in self.leaves:
            leaf._grad = None
        self.used = False

    def __len__(self) -> int:
        return len(self.nodes)


class Node:
    __slots__ = ("value", "_grad", "parents", "_backward", "requires_grad",
                 "tape", "name", "kink")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None) -> None:
        self.value = value if isinstance(value, Tensor) else Tensor(value)
        self._grad: np.ndarray | None = None
        self.parents: tuple[Node, ...] = ()
        self._backward: Callable | None = None
        self.requires_grad = requires_grad
        self.tape: Tape | None = None
        self.name = name
        self.kink = np.inf

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            return np.zeros_like(self.value.data)
        return self._grad

    def _accum(self, g: np.ndarray) -> None:
        if self._grad is None:
            self._grad = np.array(g, dtype=np.float64).reshape(self.value.data.shape)
        else:
            self._grad += g

    def __repr__(self) -> str:
        label = f"{self.name}, " if self.name else ""
        return f"Node({label}shape={self.shape})"


def constant(data) -> Node:
    return Node(data, requires_grad=False)


def as_node(x) -> Node:
    """``x`` itself if it is a node, else a constant wrapping it."""
    return x if isinstance(x, Node) else constant(x)


def _tape_for(parents: Sequence[Node]) -> Tape | None:
    """The tape shared by the gradient-carrying parents, or None if there are none.

    Constant subgraphs stay off tapes so they can be shared between graphs.
    """
    live = [p for p in parents if p.requires_grad]
    if not live:
        return None
    tape = None
    for p in live:
        if p.tape is not None:
            if tape is None:
                tape = p.tape
            elif p.tape is not tape:
                raise TapeError("inputs belong to different tapes")
    if tape is None:
        tape = Tape()
    if tape.used:
        raise TapeError("tape already consumed by backward(); call reset() first")
    for p in live:
        if p.tape is None:
            tape.adopt(p)
    return tape


def _emit(value: np.ndarray, parents: Sequence[Node], rule: Callable) -> Node:
    tape = _tape_for(parents)
    out = Node(Tensor._wrap(value), requires_grad=tape is not None)
    out.parents = tuple(parents)
    out._backward = rule
    if tape is not None:
        tape.record(out)
    return out


def _same_shape(a: Node, b: Node) -> None:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- core ops


def op_matvec(W: Node, x: Node) -> Node:
    w, v = W.data, x.data
    if w.ndim != 2 or v.ndim != 1 or w.shape[1] != v.shape[0]:
        raise DimensionError(f"cannot multiply {W.shape} by {x.shape}")

    def rule(g):
        return np.outer(g, v), w.T @ g

    return _emit(w @ v, (W, x), rule)


def op_elementwise(kind: str, a: Node, b: Node) -> Node:
    _same_shape(a, b)
    x, y = a.data, b.data
    if kind == "add":
        return _emit(x + y, (a, b), lambda g: (g, g))
    if kind == "sub":
        return _emit(x - y, (a, b), lambda g: (g, -g))
    if kind == "mul":
        return _emit(x * y, (a, b), lambda g: (g * y, g * x))
    raise ValueError(f"unknown elementwise op {kind!r}")


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form saturates cleanly instead of overflowing exp
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def op_activation(kind: str, x: Node) -> Node:
    v = x.data
    if kind == "relu":
        out = _emit(np.maximum(v, 0.0), (x,), lambda g: (g * (v > 0.0),))
        if x.requires_grad:
            out.kink = float(np.min(np.abs(v))) if v.size else np.inf
        return out
    if kind == "tanh":
        y = np.tanh(v)
        return _emit(y, (x,), lambda g: (g * (1.0 - y * y),))
    if kind == "sigmoid":
        y = sigmoid(v)
        return _emit(y, (x,), lambda g: (g * y * (1.0 - y),))
    if kind == "square_shift":
        return _emit((1.0 + v) ** 2, (x,), lambda g: (g * 2.0 * (1.0 + v),))
    raise ValueError(f"unknown activation {kind!r}")


def op_reduce(kind: str, x: Node) -> Node:
    v = x.data
    if v.size == 0:
        raise DimensionError("cannot reduce an empty tensor")
    if kind == "sum":
        return _emit(np.array([v.sum()]), (x,), lambda g: (np.full_like(v, g[0]),))
    if kind == "l2norm":
        r = float(np.sqrt(np.sum(v * v)))

        def rule(g):
            # subgradient zero at the origin
            if r == 0.0:
                return (np.zeros_like(v),)
            return (g[0] * v / r,)

        return _emit(np.array([r]), (x,), rule)
    raise ValueError(f"unknown reduction {kind!r}")


def op_concat(a: Node, b: Node) -> Node:
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise DimensionError("concat expects vectors")
    n = a.data.shape[0]
    return _emit(np.concatenate([a.data, b.data]), (a, b), lambda g: (g[:n], g[n:]))


# ------------------------------------------------- helpers used by the model


def op_row(table: Node, i: int) -> Node:
    """Row ``i`` of a matrix; the gradient touches only that row."""
    t = table.data
    if t.ndim != 2:
        raise DimensionError("row lookup needs a matrix")
    if not 0 <= i < t.shape[0]:
        raise IndexError(f"row {i} out of range for table with {t.shape[0]} rows")

    def rule(g):
        full = np.zeros_like(t)
        full[i] = g
        return (full,)

    return _emit(t[i].copy(), (table,), rule)


def op_scale(x: Node, s: Node) -> Node:
    """Multiply a tensor by a one-element node."""
    if s.data.size != 1:
        raise DimensionError("scale factor must be a single element")
    v, c = x.data, float(s.data[0])
    return _emit(v * c, (x, s), lambda g: (g * c, np.array([np.sum(g * v)])))


def op_scale_const(x: Node, c: float) -> Node:
    return _emit(x.data * c, (x,), lambda g: (g * c,))


def op_add_const(x: Node, c: float) -> Node:
    return _emit(x.data + c, (x,), lambda g: (g,))


def op_reciprocal(x: Node) -> Node:
    v = x.data
    if np.any(v == 0.0):
        raise ZeroDivisionError("reciprocal of zero")
    y = 1.0 / v
    return _emit(y, (x,), lambda g: (-g * y * y,))


def op_log_softmax(z: Node) -> Node:
    v = z.data
    shifted = v - v.max()
    lse = np.log(np.sum(np.exp(shifted)))
    out = shifted - lse
    q = np.exp(out)
    return _emit(out, (z,), lambda g: (g - q * g.sum(),))


def op_pick_sum(x: Node, ids: Iterable[int]) -> Node:
    """Sum of the coordinates listed in ``ids``."""
    v = x.data
    idx = np.asarray(list(ids), dtype=np.intp)

    def rule(g):
        full = np.zeros_like(v)
        np.add.at(full, idx, g[0])
        return (full,)

    return _emit(np.array([v[idx].sum()]), (x,), rule)


def op_bce_logits(z: Node, y) -> Node:
    """Summed binary cross-entropy of sigmoid(z) against 0/1 targets ``y``."""
    v = z.data
    t = np.broadcast_to(np.asarray(y, dtype=np.float64), v.shape)
    loss = np.maximum(v, 0.0) - v * t + np.log1p(np.exp(-np.abs(v)))
    p = sigmoid(v)
    return _emit(np.array([loss.sum()]), (z,), lambda g: (g[0] * (p - t),))


def op_sum_nodes(nodes: Sequence[Node]) -> Node:
    """Left-to-right sum of same-shaped nodes (fixed order, so results are reproducible)."""
    if not nodes:
        raise DimensionError("nothing to sum")
    acc = nodes[0]
    for n in nodes[1:]:
        acc = op_elementwise("add", acc, n)
    return acc


# ----------------------------------------------------------------- backward


def backward(loss: Node) -> None:
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss.tape
    if tape is None or loss._backward is None:
        raise TapeError("loss does not depend on any gradient-carrying node")
    if tape.used:
        raise TapeError("tape already consumed; call tape.reset() before reusing it")
    tape.used = True
    loss._accum(np.ones_like(loss.data))
    for node in reversed(tape.nodes):
        if node._grad is None or not node.requires_grad:
            continue
        for parent, g in zip(node.parents, node._backward(node._grad)):
            if g is not None and parent.requires_grad:
                parent._accum(g)


# --------------------------------------------------------------- grad check


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: tuple[str, tuple[int, ...]] | None
    n_checked: int
    kink_margin: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def _value(out) -> float:
    if isinstance(out, Node):
        return float(out.data.reshape(-1)[0])
    return float(out)


def grad_check(
    f: Callable[[dict[str, Node]], Node | float],
    params: Mapping[str, np.ndarray],
    step: float = 1e-5,
    tol: float = 1e-4,
    analytic: Mapping[str, np.ndarray] | None = None,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic gradients with central differences on every coordinate.

    ``f`` receives a dict of nodes. Without ``analytic`` it must return a
    scalar node and gradients come from :func:`backward`; with ``analytic``
    it may return a plain float. The per-coordinate error is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    kink = np.inf
    if analytic is None:
        leaves = {k: Node(v, requires_grad=True, name=k) for k, v in base.items()}
        loss = f(leaves)
        if isinstance(loss, Node) and loss.tape is not None:
            backward(loss)
            kink = min((n.kink for n in loss.tape.nodes), default=np.inf)
        grads = {k: leaves[k].grad for k in base}
    else:
        grads = {k: np.asarray(analytic[k], dtype=np.float64) for k in base}

    def evaluate(vals):
        return _value(f({k: Node(v, requires_grad=False, name=k) for k, v in vals.items()}))

    worst_err, worst, n = 0.0, None, 0
    for name, arr in base.items():
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            fp = evaluate(base)
            arr[idx] = orig - step
            fm = evaluate(base)
            arr[idx] = orig
            num = (fp - fm) / (2.0 * step)
            ana = grads[name][idx]
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            n += 1
            if worst is None or err > worst_err:
                worst_err, worst = err, (name, idx)
    return GradCheckReport(worst_err, worst, n, kink, tol)
