"""State pooling, prediction heads and their losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .diffcore import (
    as_node,
    Node,
    op_activation,
    op_bce_logits,
    op_elementwise,
    op_log_softmax,
    op_matvec,
    op_pick_sum,
    op_scale_const,
    op_sum_nodes,
    sigmoid,
)


@dataclass(frozen=True)
class Pooling:
    mode: str = "last"
    alpha: float = 0.1

    def __post_init__(self) -> None:
        if self.mode not in ("mean", "last", "exp_smooth"):
            raise ValueError(f"unknown pooling mode {self.mode!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


def pool(states: Sequence[Node], mode: Pooling) -> Node:
    if not states:
        raise ValueError("cannot pool an empty state sequence")
    return pool_prefixes(states, mode)[-1]


def pool_prefixes(states: Sequence[Node], mode: Pooling) -> list[Node]:
    """pool(h_1..h_t) for every t, sharing work across prefixes."""
    if not states:
        raise ValueError("cannot pool an empty state sequence")
    out: list[Node] = []
    if mode.mode == "last":
        return list(states)
    if mode.mode == "mean":
        acc = states[0]
        out.append(op_scale_const(acc, 1.0))
        for t in range(1, len(states)):
            acc = op_elementwise("add", acc, states[t])
            out.append(op_scale_const(acc, 1.0 / (t + 1)))
        return out
    a = mode.alpha
    acc = states[0]
    out.append(acc)
    for t in range(1, len(states)):
        acc = op_elementwise("add", op_scale_const(acc, a), op_scale_const(states[t], 1.0 - a))
        out.append(acc)
    return out


# -------------------------------------------------------------- classifiers


@dataclass
class HeadParams:
    """``hidden`` holds (W, b) pairs with tanh between them; ``W``/``b`` map to outputs."""

    W: object
    b: object
    hidden: list

    @classmethod
    def init(cls, hidden_dim: int, n_out: int, layers: int, rng: np.random.Generator) -> "HeadParams":
        lim = 1.0 / np.sqrt(hidden_dim)
        hidden = [(rng.uniform(-lim, lim, size=(hidden_dim, hidden_dim)), np.zeros(hidden_dim))
                  for _ in range(layers - 1)]
        return cls(rng.uniform(-lim, lim, size=(n_out, hidden_dim)), np.zeros(n_out), hidden)


def head_logits(hbar: Node, head: HeadParams) -> Node:
    x = hbar
    for W, b in head.hidden:
        x = op_activation("tanh", op_elementwise("add", op_matvec(as_node(W), x), as_node(b)))
    return op_elementwise("add", op_matvec(as_node(head.W), x), as_node(head.b))


def readmission_forward(hbar: Node, head: HeadParams) -> tuple[float, Node]:
    """Probability of readmission and the logit node it came from."""
    z = head_logits(hbar, head)
    return float(sigmoid(z.data)[0]), z


def readmission_loss(logit: Node, y: int) -> Node:
    return op_bce_logits(logit, [float(y)])


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - np.max(z, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


def multilabel_forward(hbar: Node, head: HeadParams) -> tuple[np.ndarray, Node]:
    """Softmax scores over the target vocabulary, and the logits node."""
    z = head_logits(hbar, head)
    return softmax(z.data), z


def masked_softmax_loss(logits: Node, targets: Iterable[int]) -> Node:
    """-sum_{j in targets} log softmax(logits)_j; only occurred labels enter the data term."""
    ids = sorted(set(int(j) for j in targets))
    if not ids:
        raise ValueError("empty target set")
    V = logits.data.shape[0]
    if ids[0] < 0 or ids[-1] >= V:
        raise IndexError("target id outside the vocabulary")
    return op_scale_const(op_pick_sum(op_log_softmax(logits), ids), -1.0)


def sigmoid_bce_loss(logits: Node, targets: Iterable[int]) -> Node:
    """Independent per-label binary cross-entropy summed over the whole vocabulary."""
    y = np.zeros(logits.data.shape[0])
    y[list(set(int(j) for j in targets))] = 1.0
    return op_bce_logits(logits, y)


def topk(scores: Sequence[float] | np.ndarray, k: int) -> list[int]:
    """Ids of the k largest scores; ties go to the smaller id."""
    q = np.asarray(scores, dtype=np.float64)
    if not 1 <= k <= q.shape[0]:
        raise ValueError(f"k={k} outside 1..{q.shape[0]}")
    order = np.lexsort((np.arange(q.shape[0]), -q))
    return [int(j) for j in order[:k]]


def treatment_task_inputs(visits: Sequence[tuple], t: int):
    """Visits 1..t with the treatments of visit t withheld, plus the withheld set.

    ``visits`` is a sequence of (diseases, treatments) pairs; ``t`` is 1-based.
    """
    if not 1 <= t <= len(visits):
        raise ValueError(f"t={t} outside 1..{len(visits)}")
    prefix = [(tuple(d), tuple(p)) for d, p in visits[:t - 1]]
    dx, tx = visits[t - 1]
    return prefix + [(tuple(dx), ())], tuple(tx)


# ------------------------------------------------------------ batched form


def pool_all(Hs: np.ndarray, mode: Pooling) -> np.ndarray:
    """Pooled state of every prefix, shape [T, B, H]."""
    if mode.mode == "last":
        return Hs
    if mode.mode == "mean":
        counts = np.arange(1, Hs.shape[0] + 1, dtype=np.float64)[:, None, None]
        return np.cumsum(Hs, axis=0) / counts
    a = mode.alpha
    P = np.empty_like(Hs)
    P[0] = Hs[0]
    for t in range(1, Hs.shape[0]):
        P[t] = a * P[t - 1] + (1.0 - a) * Hs[t]
    return P


def pool_all_backward(gP: np.ndarray, mode: Pooling) -> np.ndarray:
    if mode.mode == "last":
        return gP
    if mode.mode == "mean":
        counts = np.arange(1, gP.shape[0] + 1, dtype=np.float64)[:, None, None]
        return np.cumsum((gP / counts)[::-1], axis=0)[::-1]
    a = mode.alpha
    gH = np.empty_like(gP)
    acc = np.zeros_like(gP[0])
    for t in range(gP.shape[0] - 1, 0, -1):
        acc = gP[t] + a * acc
        gH[t] = (1.0 - a) * acc
    gH[0] = gP[0] + a * acc
    return gH


def head_forward_batch(hb: np.ndarray, W: np.ndarray, b: np.ndarray, hidden: list):
    acts = [hb]
    x = hb
    for Wk, bk in hidden:
        x = np.tanh(x @ Wk.T + bk)
        acts.append(x)
    return x @ W.T + b, acts


def head_backward_batch(gz: np.ndarray, W: np.ndarray, hidden: list, acts: list):
    """Returns (d hb, dW, db, [(dWk, dbk), ...])."""
    dW = gz.T @ acts[-1]
    db = gz.sum(axis=0)
    g = gz @ W
    dhidden = []
    for k in range(len(hidden) - 1, -1, -1):
        Wk, _ = hidden[k]
        y = acts[k + 1]
        gpre = g * (1.0 - y * y)
        dhidden.append((gpre.T @ acts[k], gpre.sum(axis=0)))
        g = gpre @ Wk
    dhidden.reverse()
    return g, dW, db, dhidden


def bce_logits_batch(z: np.ndarray, y: np.ndarray):
    """Summed-per-row BCE and its gradient w.r.t. ``z``."""
    loss = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return loss.sum(axis=1), sigmoid(z) - y


def masked_softmax_batch(z: np.ndarray, Y: np.ndarray):
    """Masked softmax loss per row for multi-hot targets ``Y``, and its gradient."""
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    logq = shifted - lse
    loss = -np.sum(Y * logq, axis=1)
    grad = np.exp(logq) * Y.sum(axis=1, keepdims=True) - Y
    return loss, grad
