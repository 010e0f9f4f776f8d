"""Batched LSTM forward/backward over padded sequences.

The time recurrence runs in the compiled ``_lstm_ext`` module when it was
built, otherwise in the numpy fallback ``_lstm_py``. Set
``RESSET_PURE_PYTHON=1`` to force the fallback. Input projections and weight
gradients are single large matmuls and stay in numpy for both.

Arrays are laid out ``[T, B, ...]``. Sequences shorter than ``T`` may be
zero-padded at the end: padded steps never feed back into earlier ones, so
as long as their upstream gradient is zero they leave the result unchanged.
"""

from __future__ import annotations

import os

import numpy as np

from . import _lstm_py

if os.environ.get("RESSET_PURE_PYTHON", "") not in ("", "0"):
    _impl = _lstm_py
    BACKEND = "python"
else:
    try:
        from . import _lstm_ext as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _lstm_py
        BACKEND = "python"

IMPLEMENTATIONS = {"python": _lstm_py}
if BACKEND == "cython":
    IMPLEMENTATIONS["cython"] = _impl


def lstm_forward(X: np.ndarray, W: np.ndarray, b: np.ndarray, impl=None):
    """Run the recurrence from a zero state.

    ``W`` is the stacked gate matrix [4H, I+H] (forget, input, output,
    candidate), ``b`` the stacked bias [4H]. Returns ``(Hs, Cs, G)`` with the
    hidden states, memories and activated gates at every step.
    """
    impl = impl or _impl
    T, B, I = X.shape
    H4 = W.shape[0]
    Zx = np.ascontiguousarray((X.reshape(T * B, I) @ W[:, :I].T + b).reshape(T, B, H4))
    Wh = np.ascontiguousarray(W[:, I:])
    return impl.recur_forward(Zx, Wh)


def lstm_backward(X, W, Hs, Cs, G, dH, impl=None):
    """Returns ``(dX, dW, db)`` given d(loss)/d(h_t) for every step."""
    impl = impl or _impl
    T, B, I = X.shape
    H = Hs.shape[2]
    Wh = np.ascontiguousarray(W[:, I:])
    dZ = impl.recur_backward(Wh, np.ascontiguousarray(Cs), np.ascontiguousarray(G),
                             np.ascontiguousarray(dH, dtype=np.float64))
    dZ2 = dZ.reshape(T * B, 4 * H)
    dW = np.empty_like(W)
    dW[:, :I] = dZ2.T @ X.reshape(T * B, I)
    if T > 1:
        dW[:, I:] = dZ[1:].reshape(-1, 4 * H).T @ Hs[:-1].reshape(-1, H)
    else:
        dW[:, I:] = 0.0
    db = dZ2.sum(axis=0)
    dX = (dZ2 @ W[:, :I]).reshape(T, B, I)
    return dX, dW, db
