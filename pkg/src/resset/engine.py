"""Batched forward/backward for whole mini-batches with hand-written gradients.

Computes exactly what :func:`resset.model.batch_graph_loss` computes, but on
padded ``[T, B, ...]`` arrays with the LSTM recurrence in :mod:`resset.kernels`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .config import ModelConfig
from .data import Batch
from .diffcore import sigmoid
from .heads import (
    Pooling,
    bce_logits_batch,
    head_backward_batch,
    head_forward_batch,
    masked_softmax_batch,
    pool_all,
    pool_all_backward,
    softmax,
)
from .interaction import interact_batch, interact_batch_backward
from .model import head_of, is_token_model
from .recurrent import GATES, penalty_batch


@dataclass
class BatchResult:
    loss_sum: float
    n_events: int
    grads: dict | None
    outputs: np.ndarray
    states: np.ndarray

    @property
    def loss(self) -> float:
        return self.loss_sum / max(self.n_events, 1)


def run_batch(P: dict, batch: Batch, cfg: ModelConfig, masks: np.ndarray | None = None,
              need_grad: bool = True, impl=None) -> BatchResult:
    """Forward (and backward) pass over one padded batch.

    ``grads`` are d(mean loss per event)/d(param). ``outputs`` has one row
    per event: the readmission probability, or the score vector over the
    target vocabulary. ``masks`` ([T, B, embed_dim]) turns on dropout.
    """
    T, B = batch.T, batch.B
    embed = P["embed"]
    V, n = embed.shape
    table = np.vstack([embed, np.zeros((1, n))])

    if is_token_model(cfg):
        X = table[batch.tok_idx]
        icache = None
    else:
        v, icache = interact_batch(cfg.interaction, table,
                                   batch.dx_idx.reshape(T * B, -1),
                                   batch.tx_idx.reshape(T * B, -1), cfg.epsilon)
        X = v.reshape(T, B, n)
    Xr = np.maximum(X, 0.0)
    Xin = Xr * masks if masks is not None else Xr

    W = np.concatenate([P[f"lstm.W{g}"] for g in GATES], axis=0)
    bias = np.concatenate([P[f"lstm.b{g}"] for g in GATES])
    Hs, Cs, G = kernels.lstm_forward(np.ascontiguousarray(Xin), W, bias, impl=impl)

    pooling = Pooling(cfg.pooling, cfg.exp_alpha)
    Pooled = pool_all(Hs, pooling)
    hb = Pooled[batch.ev_t, batch.ev_b]
    head = head_of(P)
    z, acts = head_forward_batch(hb, head.W, head.b, head.hidden)

    if cfg.task == "readmission":
        ev_loss, gz = bce_logits_batch(z, batch.targets)
        outputs = sigmoid(z[:, 0])
    elif cfg.multilabel_loss == "masked_softmax":
        ev_loss, gz = masked_softmax_batch(z, batch.targets)
        outputs = softmax(z)
    else:
        ev_loss, gz = bce_logits_batch(z, batch.targets)
        outputs = sigmoid(z)

    beta = cfg.state_reg_beta
    pen, gH_pen = penalty_batch(Hs, batch.lengths, beta)
    E = batch.n_events
    loss_sum = float(np.sum(ev_loss) + np.sum(pen))
    if not need_grad:
        return BatchResult(loss_sum, E, None, outputs, Hs)

    scale = 1.0 / max(E, 1)
    ghb, dWh, dbh, dhidden = head_backward_batch(gz * scale, head.W, head.hidden, acts)
    gP = np.zeros_like(Hs)
    np.add.at(gP, (batch.ev_t, batch.ev_b), ghb)
    gH = pool_all_backward(gP, pooling)
    if beta > 0.0:
        gH = gH + gH_pen * scale
    dX, dW, db = kernels.lstm_backward(Xin, W, Hs, Cs, G, gH, impl=impl)
    if masks is not None:
        dX = dX * masks
    dX = dX * (X > 0.0)

    gtable = np.zeros_like(table)
    if is_token_model(cfg):
        np.add.at(gtable, batch.tok_idx, dX)
    else:
        interact_batch_backward(dX.reshape(T * B, n), icache, gtable)

    H = cfg.hidden_dim
    grads = {"embed": gtable[:V], "head.W": dWh, "head.b": dbh}
    for k, g in enumerate(GATES):
        grads[f"lstm.W{g}"] = dW[k * H:(k + 1) * H]
        grads[f"lstm.b{g}"] = db[k * H:(k + 1) * H]
    for k, (gw, gb) in enumerate(dhidden):
        grads[f"head.hidden{k}.W"] = gw
        grads[f"head.hidden{k}.b"] = gb
    return BatchResult(loss_sum, E, grads, outputs, Hs)
