"""Order-blind and set-blind baselines.

Bag-of-words: every disease and treatment code is a word, the (truncated)
history is the document, and a regularized linear model reads the counts.
The flat LSTM treats each code as its own time step; it is trained through
:mod:`resset.trainer` with ``model = flat-lstm`` and shares everything but
the input layer with the visit-level model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from .codespace import lookup
from .config import ModelConfig
from .data import EncodedPatient, visit_events
from .diffcore import Node
from .heads import Pooling, pool, softmax
from .model import lstm_of
from .recurrent import unroll

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


# -------------------------------------------------------------- features


def bow_features(visits: Sequence[tuple[Sequence[int], Sequence[int]]], size: int) -> np.ndarray:
    """Code counts over ``visits`` (pairs of global dx/tx ids); length ``size``."""
    x = np.zeros(size)
    for dx, tx in visits:
        for j in dx:
            x[j] += 1.0
        for j in tx:
            x[j] += 1.0
    return x


def bow_events(patients: Sequence[EncodedPatient], task: str, size: int, offset: int,
               max_visits: int = 10) -> tuple[np.ndarray, list, list[str]]:
    """One feature row per prediction event, with its target and patient id.

    Rows see exactly the visits the sequence models see for the same event;
    for treatment recommendation that means the current visit's treatments
    are withheld.
    """
    rows, targets, owners = [], [], []
    for p in patients:
        for visits, events in visit_events(p, task, offset, max_visits):
            for t, target in events:
                rows.append(bow_features(visits[: t + 1], size))
                targets.append(target)
                owners.append(p.id)
    X = np.array(rows) if rows else np.zeros((0, size))
    return X, targets, owners


# ----------------------------------------------------------- linear model


@dataclass
class LinearModel:
    W: np.ndarray  # [n_out, F]
    b: np.ndarray  # [n_out]
    kind: str      # "binary" | "softmax"
    iterations: int = 0
    grad_norm: float = 0.0

    def logits(self, X: np.ndarray) -> np.ndarray:
        return X @ self.W.T + self.b

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Probabilities of the positive class, or softmax scores per row."""
        z = self.logits(np.atleast_2d(X))
        if self.kind == "binary":
            return 1.0 / (1.0 + np.exp(-z[:, 0]))
        return softmax(z)

    def params(self) -> dict:
        return {"W": self.W, "b": self.b}


def _target_matrix(targets, task: str, n_out: int) -> np.ndarray:
    if task == "readmission":
        return np.asarray(targets, dtype=np.float64).reshape(-1, 1)
    Y = np.zeros((len(targets), n_out))
    for e, ids in enumerate(targets):
        if not len(ids):
            raise ValueError(f"event {e} has an empty target set")
        Y[e, list(ids)] = 1.0
    return Y


def _data_loss(W, b, X, Y, kind):
    """Mean per-event loss and its gradient, without the penalty."""
    N = X.shape[0]
    z = X @ W.T + b
    if kind == "binary":
        loss_ev = np.logaddexp(0.0, z) - Y * z
        g = (expit(z) - Y) / N
    else:
        m = z.max(axis=1, keepdims=True)
        lse = m + np.log(np.sum(np.exp(z - m), axis=1, keepdims=True))
        logp = z - lse
        loss_ev = -np.sum(Y * logp, axis=1)
        k = Y.sum(axis=1, keepdims=True)
        g = (k * np.exp(logp) - Y) / N
    return float(np.sum(loss_ev) / N), g.T @ X, g.sum(axis=0)


def _objective(W, b, X, Y, l2, kind):
    """Mean per-event loss + l2/2 ||W||^2 and its gradient."""
    f, gW, gb = _data_loss(W, b, X, Y, kind)
    return f + 0.5 * l2 * float(np.sum(W * W)), gW + l2 * W, gb


def logreg_loss(W: np.ndarray, b: np.ndarray, X: np.ndarray, targets, task: str, l2: float) -> float:
    kind = "binary" if task == "readmission" else "softmax"
    Y = _target_matrix(targets, task, W.shape[0])
    return _objective(W, b, X, Y, l2, kind)[0]


def train_logreg(X: np.ndarray, targets, l2: float = 1e-3, task: str = "readmission",
                 n_out: int | None = None, lr: float | None = None, max_iter: int = 5000,
                 tol: float = 1e-6) -> LinearModel:
    """Fit a regularized linear classifier by full-batch gradient descent.

    Readmission: logistic loss. Disease/treatment: one softmax layer with
    the masked loss of the sequence models. Each step is a gradient step on
    the data loss followed by the exact shrinkage of the L2 term (proximal
    gradient), so a large ``l2`` does not force tiny steps. The step size is
    found by backtracking unless ``lr`` fixes it, in which case a rising
    objective raises :class:`DivergenceError`. Stops when the gradient norm
    of the full objective drops below ``tol`` or after ``max_iter`` steps.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("train_logreg needs a non-empty 2-D feature matrix")
    if l2 < 0:
        raise ValueError("l2 must be >= 0")
    kind = "binary" if task == "readmission" else "softmax"
    if kind == "binary":
        n_out = 1
    elif n_out is None:
        n_out = 1 + max(max(ids) for ids in targets)
    Y = _target_matrix(targets, task, n_out)
    if Y.shape[0] != X.shape[0]:
        raise ValueError("features and targets differ in length")

    W = np.zeros((n_out, X.shape[1]))
    b = np.zeros(n_out)
    s, sW, sb = _data_loss(W, b, X, Y, kind)
    F = s + 0.5 * l2 * float(np.sum(W * W))
    step = 1.0 if lr is None else lr
    it = 0

    def grad_norm(W, sW, sb):
        gW = sW + l2 * W
        return float(np.sqrt(np.sum(gW * gW) + np.sum(sb * sb)))

    gnorm = grad_norm(W, sW, sb)
    while gnorm >= tol and it < max_iter:
        while True:
            W2 = (W - step * sW) / (1.0 + step * l2)
            b2 = b - step * sb
            s2, sW2, sb2 = _data_loss(W2, b2, X, Y, kind)
            F2 = s2 + 0.5 * l2 * float(np.sum(W2 * W2))
            if lr is not None:
                if not np.isfinite(F2) or F2 > F + 1e-12 * max(1.0, abs(F)):
                    raise DivergenceError(
                        f"objective rose from {F:.6g} to {F2:.6g} at iteration {it + 1} "
                        f"(lr={lr}, gradient norm {gnorm:.3g}); lower the learning rate")
                break
            dW, db = W2 - W, b2 - b
            # sufficient decrease of the smooth part (standard prox-gradient test)
            bound = s + float(np.sum(sW * dW) + np.sum(sb * db)) \
                + (float(np.sum(dW * dW)) + float(np.sum(db * db))) / (2.0 * step)
            if np.isfinite(s2) and s2 <= bound + 1e-15 * max(1.0, abs(s)):
                break
            step *= 0.5
            if step < 1e-20:
                raise DivergenceError(f"line search failed at iteration {it + 1} "
                                      f"(objective {F:.6g}, gradient norm {gnorm:.3g})")
        W, b, s, sW, sb, F = W2, b2, s2, sW2, sb2, F2
        gnorm = grad_norm(W, sW, sb)
        it += 1
        if lr is None:
            step *= 2.0
    if gnorm >= tol:
        log.debug("train_logreg stopped at the iteration cap, gradient norm %.3g", gnorm)
    return LinearModel(W, b, kind, it, gnorm)


def linear_from_params(P: Mapping[str, np.ndarray], task: str) -> LinearModel:
    return LinearModel(np.asarray(P["W"]), np.asarray(P["b"]),
                       "binary" if task == "readmission" else "softmax")


# ------------------------------------------------------------- flat lstm


def flat_lstm(patient: EncodedPatient, P: Mapping[str, Node], cfg: ModelConfig,
              rng: np.random.Generator | None = None) -> Node:
    """Pooled LSTM state after reading the patient's codes one token at a time.

    Codes within a visit are shuffled by ``rng``, or sorted when it is None.
    Only the last ``cfg.max_visits`` visits and ``cfg.max_tokens`` tokens
    are read.
    """
    if not patient.visits:
        raise ValueError("flat_lstm needs at least one visit")
    toks = flat_tokens(patient.visits[-cfg.max_visits:], cfg.max_tokens, rng)
    inputs = lookup(P["embed"], toks)
    states = unroll(lstm_of(P), inputs, relu_input=True)
    return pool(states, Pooling(cfg.pooling, cfg.exp_alpha))


def flat_tokens(visits, max_tokens: int, rng: np.random.Generator | None = None) -> list[int]:
    toks: list[int] = []
    for dx, tx in visits:
        codes = sorted(dx) + sorted(tx)
        if rng is not None:
            codes = [codes[j] for j in rng.permutation(len(codes))]
        toks.extend(codes)
    return toks[-max_tokens:]

