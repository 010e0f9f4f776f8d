"""Pure numpy LSTM recurrence, vectorized over the batch.

Gate blocks along the last axis are ordered forget, input, output, candidate.
``Zx`` already holds the input projection plus bias for every step.
"""

import numpy as np


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def recur_forward(Zx, Wh):
    T, B, H4 = Zx.shape
    H = H4 // 4
    Hs = np.empty((T, B, H))
    Cs = np.empty((T, B, H))
    G = np.empty((T, B, H4))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    WhT = Wh.T
    for t in range(T):
        z = Zx[t] + h @ WhT
        g = G[t]
        g[:, :3 * H] = _sigmoid(z[:, :3 * H])
        g[:, 3 * H:] = np.tanh(z[:, 3 * H:])
        c = g[:, :H] * c + g[:, H:2 * H] * g[:, 3 * H:]
        h = g[:, 2 * H:3 * H] * np.tanh(c)
        Cs[t] = c
        Hs[t] = h
    return Hs, Cs, G


def recur_backward(Wh, Cs, G, dH):
    """Gradient w.r.t. the pre-activations ``Zx`` given d(loss)/d(h_t) for every t."""
    T, B, H = dH.shape
    dZ = np.empty((T, B, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    zeros = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        g = G[t]
        f, i, o, cand = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
        tc = np.tanh(Cs[t])
        c_prev = Cs[t - 1] if t > 0 else zeros
        dh = dH[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = dZ[t]
        dz[:, :H] = dc * c_prev * f * (1.0 - f)
        dz[:, H:2 * H] = dc * cand * i * (1.0 - i)
        dz[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
        dz[:, 3 * H:] = dc * i * (1.0 - cand * cand)
        dc_next = dc * f
        dh_next = dz @ Wh
    return dZ
