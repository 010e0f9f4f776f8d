"""Model parameters and the reference (tape-based) forward pass.

Parameters live in a flat ``dict[str, np.ndarray]``:

    embed                  [|V_d| + |V_t|, embed_dim]
    lstm.W{f,i,o,c}        [hidden, embed_dim + hidden]
    lstm.b{f,i,o,c}        [hidden]
    head.hidden{k}.W/.b    optional tanh layers, [hidden, hidden] / [hidden]
    head.W / head.b        [n_out, hidden] / [n_out]

The same layout is consumed by :mod:`resset.engine`, the batched path used
for training; the functions here build one autodiff graph per sequence and
serve as its reference.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .codespace import init_embeddings, lookup
from .config import ModelConfig
from .data import EventSequence
from .diffcore import Node, constant, op_elementwise, op_scale_const, sigmoid
from .heads import (
    HeadParams,
    Pooling,
    head_logits,
    masked_softmax_loss,
    pool_prefixes,
    readmission_loss,
    sigmoid_bce_loss,
    softmax,
)
from .interaction import interact
from .recurrent import GATES, LstmParams, state_norm_penalty, unroll
from .setfn import SetFnConfig

ModelParams = dict  # name -> np.ndarray


def is_token_model(cfg: ModelConfig) -> bool:
    return cfg.model == "flat-lstm"


def init_params(cfg: ModelConfig, vocab_sizes: Sequence[int], n_out: int,
                rng: np.random.Generator) -> ModelParams:
    P: ModelParams = {"embed": init_embeddings(vocab_sizes, cfg.embed_dim, rng)}
    lstm = LstmParams.init(cfg.embed_dim, cfg.hidden_dim, rng)
    for g, W, b in zip(GATES, lstm.weights(), lstm.biases()):
        P[f"lstm.W{g}"] = W
        P[f"lstm.b{g}"] = b
    head = HeadParams.init(cfg.hidden_dim, n_out, cfg.head_layers, rng)
    for k, (W, b) in enumerate(head.hidden):
        P[f"head.hidden{k}.W"] = W
        P[f"head.hidden{k}.b"] = b
    P["head.W"] = head.W
    P["head.b"] = head.b
    return P


def lstm_of(P: Mapping) -> LstmParams:
    return LstmParams(*(P[f"lstm.W{g}"] for g in GATES), *(P[f"lstm.b{g}"] for g in GATES))


def head_of(P: Mapping) -> HeadParams:
    hidden = []
    k = 0
    while f"head.hidden{k}.W" in P:
        hidden.append((P[f"head.hidden{k}.W"], P[f"head.hidden{k}.b"]))
        k += 1
    return HeadParams(P["head.W"], P["head.b"], hidden)


def as_nodes(P: Mapping[str, np.ndarray], requires_grad: bool = True) -> dict[str, Node]:
    return {k: Node(v, requires_grad=requires_grad, name=k) for k, v in P.items()}


def sequence_graph(P: Mapping[str, Node], seq: EventSequence, cfg: ModelConfig,
                   training: bool = False, masks: np.ndarray | None = None):
    """Build the graph for one sequence.

    Returns ``(loss, outputs)`` where ``loss`` is the summed event losses
    plus the state-norm penalty, and ``outputs`` holds, per event, the
    probability (readmission) or score vector (multilabel).
    """
    table = P["embed"]
    if is_token_model(cfg):
        inputs = lookup(table, seq.steps)
    else:
        setcfg = SetFnConfig(cfg.epsilon)
        inputs = [interact(cfg.interaction, dx, tx, table, setcfg) for dx, tx in seq.steps]
    states = unroll(lstm_of(P), inputs, relu_input=True, dropout_p=cfg.dropout,
                    training=training and masks is not None, masks=masks)
    pooled = pool_prefixes(states, Pooling(cfg.pooling, cfg.exp_alpha))
    head = head_of(P)
    losses = []
    outputs = []
    for t, target in seq.events:
        z = head_logits(pooled[t], head)
        if cfg.task == "readmission":
            losses.append(readmission_loss(z, int(target)))
            outputs.append(float(sigmoid(z.data)[0]))
        else:
            if cfg.multilabel_loss == "masked_softmax":
                losses.append(masked_softmax_loss(z, target))
                outputs.append(softmax(z.data))
            else:
                losses.append(sigmoid_bce_loss(z, target))
                outputs.append(sigmoid(z.data))
    total = losses[0]
    for item in losses[1:]:
        total = op_elementwise("add", total, item)
    if cfg.state_reg_beta > 0.0:
        total = op_elementwise("add", total, state_norm_penalty(states, cfg.state_reg_beta))
    return total, outputs


def batch_graph_loss(P: Mapping[str, Node], seqs: Sequence[EventSequence], cfg: ModelConfig,
                     training: bool = False, masks: np.ndarray | None = None) -> Node:
    """Mean loss per event over a batch; ``masks`` is [T, B, embed_dim] or None."""
    total = None
    n_events = 0
    for b, seq in enumerate(seqs):
        m = None if masks is None else masks[: len(seq.steps), b]
        loss, _ = sequence_graph(P, seq, cfg, training=training, masks=m)
        total = loss if total is None else op_elementwise("add", total, loss)
        n_events += len(seq.events)
    if total is None:
        return constant([0.0])
    return op_scale_const(total, 1.0 / n_events)
