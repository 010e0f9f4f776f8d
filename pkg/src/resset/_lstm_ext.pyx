# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled LSTM recurrence; same contract as ``_lstm_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


# exp-based forms: libm tanh is several times slower than exp
cdef inline double _sig(double x) noexcept nogil:
    return 1.0 / (1.0 + exp(-x))


cdef inline double _tanh(double x) noexcept nogil:
    return 1.0 - 2.0 / (1.0 + exp(2.0 * x))


def recur_forward(double[:, :, ::1] Zx, Wh_in):
    cdef double[:, ::1] Wh = np.ascontiguousarray(Wh_in, dtype=np.float64)
    cdef int T = Zx.shape[0], B = Zx.shape[1], H4 = Zx.shape[2]
    cdef int H = H4 // 4
    Hs_a = np.zeros((T, B, H))
    Cs_a = np.zeros((T, B, H))
    G_a = np.empty((T, B, H4))
    Z_a = np.empty((B, H4))
    cdef double[:, :, ::1] Hs = Hs_a, Cs = Cs_a, G = G_a
    cdef double[:, ::1] Z = Z_a
    cdef int t, b, j
    cdef double cprev
    cdef char ta = b'T', tn = b'N'
    cdef double one = 1.0
    with nogil:
        for t in range(T):
            for b in range(B):
                for j in range(H4):
                    Z[b, j] = Zx[t, b, j]
            if t > 0 and H > 0 and B > 0:
                # Z[B,4H] += h_{t-1}[B,H] @ Wh.T  (column-major view)
                dgemm(&ta, &tn, &H4, &B, &H, &one, &Wh[0, 0], &H,
                      &Hs[t - 1, 0, 0], &H, &one, &Z[0, 0], &H4)
            # activations first, in flat loops the compiler can vectorize
            for b in range(B):
                for j in range(3 * H):
                    G[t, b, j] = _sig(Z[b, j])
                for j in range(3 * H, H4):
                    G[t, b, j] = _tanh(Z[b, j])
                for j in range(H):
                    cprev = Cs[t - 1, b, j] if t > 0 else 0.0
                    Cs[t, b, j] = G[t, b, j] * cprev + G[t, b, H + j] * G[t, b, 3 * H + j]
                for j in range(H):
                    Hs[t, b, j] = G[t, b, 2 * H + j] * _tanh(Cs[t, b, j])
    return Hs_a, Cs_a, G_a


def recur_backward(Wh_in, double[:, :, ::1] Cs, double[:, :, ::1] G, double[:, :, ::1] dH):
    cdef double[:, ::1] Wh = np.ascontiguousarray(Wh_in, dtype=np.float64)
    cdef int T = dH.shape[0], B = dH.shape[1], H = dH.shape[2]
    cdef int H4 = 4 * H
    dZ_a = np.zeros((T, B, H4))
    dhn_a = np.zeros((B, H))
    dcn_a = np.zeros((B, H))
    cdef double[:, :, ::1] dZ = dZ_a
    cdef double[:, ::1] dhn = dhn_a, dcn = dcn_a
    cdef int t, b, j
    cdef double f, i, o, cand, tc, dh, dc, cprev
    cdef char tn = b'N'
    cdef double one = 1.0, zero = 0.0
    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                for j in range(H):
                    f = G[t, b, j]
                    i = G[t, b, H + j]
                    o = G[t, b, 2 * H + j]
                    cand = G[t, b, 3 * H + j]
                    tc = _tanh(Cs[t, b, j])
                    cprev = Cs[t - 1, b, j] if t > 0 else 0.0
                    dh = dH[t, b, j] + dhn[b, j]
                    dc = dcn[b, j] + dh * o * (1.0 - tc * tc)
                    dZ[t, b, j] = dc * cprev * f * (1.0 - f)
                    dZ[t, b, H + j] = dc * cand * i * (1.0 - i)
                    dZ[t, b, 2 * H + j] = dh * tc * o * (1.0 - o)
                    dZ[t, b, 3 * H + j] = dc * i * (1.0 - cand * cand)
                    dcn[b, j] = dc * f
            if H > 0 and B > 0:
                # dh_next[B,H] = dZ_t[B,4H] @ Wh[4H,H]
                dgemm(&tn, &tn, &H, &B, &H4, &one, &Wh[0, 0], &H,
                      &dZ[t, 0, 0], &H4, &zero, &dhn[0, 0], &H)
    return dZ_a
