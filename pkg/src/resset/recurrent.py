"""LSTM over per-visit vectors, plus the state-norm stability penalty."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .diffcore import (
    as_node,
    DimensionError,
    Node,
    constant,
    op_activation,
    op_concat,
    op_elementwise,
    op_matvec,
    op_reduce,
    op_scale_const,
)

GATES = ("f", "i", "o", "c")


@dataclass
class LstmParams:
    """Per-gate weights [hidden, input+hidden] and biases [hidden].

    Fields hold arrays for storage or nodes inside a forward pass.
    """

    Wf: object
    Wi: object
    Wo: object
    Wc: object
    bf: object
    bi: object
    bo: object
    bc: object

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> "LstmParams":
        shape = (hidden_dim, input_dim + hidden_dim)
        W = {g: rng.uniform(-0.08, 0.08, size=shape) for g in GATES}
        return cls(W["f"], W["i"], W["o"], W["c"],
                   np.ones(hidden_dim), np.zeros(hidden_dim),
                   np.zeros(hidden_dim), np.zeros(hidden_dim))

    def weights(self) -> list:
        return [self.Wf, self.Wi, self.Wo, self.Wc]

    def biases(self) -> list:
        return [self.bf, self.bi, self.bo, self.bc]

    @property
    def hidden_dim(self) -> int:
        return _arr(self.bf).shape[0]

    @property
    def input_dim(self) -> int:
        return _arr(self.Wf).shape[1] - self.hidden_dim

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.concatenate([_arr(w) for w in self.weights()], axis=0),
                np.concatenate([_arr(b) for b in self.biases()]))


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Node) else np.asarray(x)


@dataclass
class LstmState:
    c: Node
    h: Node

    @classmethod
    def zeros(cls, hidden_dim: int) -> "LstmState":
        return cls(constant(np.zeros(hidden_dim)), constant(np.zeros(hidden_dim)))


def _gate(W, b, xh: Node, kind: str) -> Node:
    return op_activation(kind, op_elementwise("add", op_matvec(as_node(W), xh), as_node(b)))


def lstm_step(params: LstmParams, v: Node, state: LstmState) -> LstmState:
    H = params.hidden_dim
    if v.data.ndim != 1 or v.data.shape[0] != params.input_dim or state.h.data.shape[0] != H:
        raise DimensionError(
            f"input {v.shape} / state {state.h.shape} do not match an LSTM "
            f"with input {params.input_dim}, hidden {H}")
    xh = op_concat(v, state.h)
    f = _gate(params.Wf, params.bf, xh, "sigmoid")
    i = _gate(params.Wi, params.bi, xh, "sigmoid")
    o = _gate(params.Wo, params.bo, xh, "sigmoid")
    cand = _gate(params.Wc, params.bc, xh, "tanh")
    c = op_elementwise("add", op_elementwise("mul", f, state.c), op_elementwise("mul", i, cand))
    h = op_elementwise("mul", o, op_activation("tanh", c))
    return LstmState(c, h)


def dropout_masks(rng: np.random.Generator, shape: tuple[int, ...], p: float) -> np.ndarray:
    """Inverted-dropout multipliers: 0 with probability p, else 1/(1-p)."""
    if p == 0.0:
        return np.ones(shape)
    return (rng.random(shape) >= p) / (1.0 - p)


def unroll(params: LstmParams, inputs: Sequence[Node], relu_input: bool = True,
           dropout_p: float = 0.0, rng: np.random.Generator | None = None,
           training: bool = False, masks: np.ndarray | None = None) -> list[Node]:
    """Hidden states h_1..h_T from a zero initial state.

    Inputs pass through relu and, when training, inverted dropout. ``masks``
    ([T, input]) overrides the draw from ``rng``.
    """
    if not inputs:
        raise ValueError("unroll needs at least one input")
    if not 0.0 <= dropout_p < 1.0:
        raise ValueError("dropout_p must lie in [0, 1)")
    n = params.input_dim
    if training and dropout_p > 0.0 and masks is None:
        if rng is None:
            raise ValueError("training with dropout needs an rng")
        masks = dropout_masks(rng, (len(inputs), n), dropout_p)
    state = LstmState.zeros(params.hidden_dim)
    states = []
    for t, v in enumerate(inputs):
        x = op_activation("relu", v) if relu_input else v
        if training and masks is not None:
            x = op_elementwise("mul", x, constant(masks[t]))
        state = lstm_step(params, x, state)
        states.append(state.h)
    return states


def state_norm_penalty(states: Sequence[Node], beta: float) -> Node:
    """(beta / T) * sum_{t>=2} (||h_t|| - ||h_{t-1}||)^2"""
    T = len(states)
    if T < 1:
        raise ValueError("need at least one state")
    if T == 1 or beta == 0.0:
        return constant([0.0])
    norms = [op_reduce("l2norm", h) for h in states]
    total = None
    for t in range(1, T):
        d = op_elementwise("sub", norms[t], norms[t - 1])
        sq = op_elementwise("mul", d, d)
        total = sq if total is None else op_elementwise("add", total, sq)
    return op_scale_const(total, beta / T)


def norm_variation(states: np.ndarray) -> float:
    """sum_t (||h_t|| - ||h_{t-1}||)^2 / T for one sequence of states [T, H]."""
    nrm = np.linalg.norm(states, axis=1)
    return float(np.sum(np.diff(nrm) ** 2) / len(nrm))


# ------------------------------------------------------------ batched form


def penalty_batch(Hs: np.ndarray, lengths: np.ndarray, beta: float):
    """Per-sequence penalties [B] and d(sum of penalties)/d(Hs)."""
    T, B, _ = Hs.shape
    gH = np.zeros_like(Hs)
    if beta == 0.0 or T < 2:
        return np.zeros(B), gH
    nrm = np.sqrt(np.sum(Hs * Hs, axis=2))
    steps = np.arange(1, T)[:, None]
    valid = steps < lengths[None, :]
    d = (nrm[1:] - nrm[:-1]) * valid
    scale = beta / lengths.astype(np.float64)
    pen = scale * np.sum(d * d, axis=0)
    gd = 2.0 * scale[None, :] * d
    gn = np.zeros_like(nrm)
    gn[1:] += gd
    gn[:-1] -= gd
    with np.errstate(divide="ignore", invalid="ignore"):
        unit = np.where(nrm[..., None] > 0.0, Hs / nrm[..., None], 0.0)
    gH = gn[..., None] * unit
    return pen, gH
