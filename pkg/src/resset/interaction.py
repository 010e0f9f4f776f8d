"""Visit-level interaction between the disease bag and the treatment bag.

Each mode forms a difference-like vector from the two set encodings and
passes it through rho(x) = (1 + x)**2 elementwise.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .diffcore import Node, op_activation, op_elementwise
from .setfn import SetFnConfig, encode_batch, encode_batch_backward, encode_ids

MODES = ("subtractive", "additive", "multiplicative", "implicit")
_ELEMENTWISE = {"subtractive": "sub", "additive": "add", "multiplicative": "mul"}


def check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"unknown interaction mode {mode!r}; expected one of {MODES}")
    return mode


def interact(mode: str, dx: Iterable[int], tx: Iterable[int], table: Node,
             setcfg: SetFnConfig = SetFnConfig()) -> Node:
    """Visit vector from global disease ids ``dx`` and treatment ids ``tx``."""
    check_mode(mode)
    if mode == "implicit":
        delta = encode_ids(table, list(dx) + list(tx), setcfg)
    else:
        d = encode_ids(table, dx, setcfg)
        p = encode_ids(table, tx, setcfg)
        delta = op_elementwise(_ELEMENTWISE[mode], d, p)
    return op_activation("square_shift", delta)


def rho(delta: np.ndarray) -> np.ndarray:
    return (1.0 + delta) ** 2


# ------------------------------------------------------------ batched form


def interact_batch(mode: str, table_ext: np.ndarray, dx_idx: np.ndarray, tx_idx: np.ndarray,
                   eps: float):
    """Visit vectors for N visits at once; returns (v [N, n], cache)."""
    if mode == "implicit":
        delta, c_u = encode_batch(table_ext, np.concatenate([dx_idx, tx_idx], axis=1), eps)
        cache = (mode, delta, c_u, None, None, None)
    else:
        d, c_d = encode_batch(table_ext, dx_idx, eps)
        p, c_p = encode_batch(table_ext, tx_idx, eps)
        if mode == "subtractive":
            delta = d - p
        elif mode == "additive":
            delta = d + p
        elif mode == "multiplicative":
            delta = d * p
        else:
            raise ValueError(f"unknown interaction mode {mode!r}")
        cache = (mode, delta, c_d, c_p, d, p)
    return rho(delta), cache


def interact_batch_backward(g: np.ndarray, cache, gtable_ext: np.ndarray) -> None:
    mode, delta, c_a, c_b, d, p = cache
    gdelta = g * 2.0 * (1.0 + delta)
    if mode == "implicit":
        encode_batch_backward(gdelta, c_a, gtable_ext)
        return
    if mode == "subtractive":
        gd, gp = gdelta, -gdelta
    elif mode == "additive":
        gd, gp = gdelta, gdelta
    else:
        gd, gp = gdelta * p, gdelta * d
    encode_batch_backward(gd, c_a, gtable_ext)
    encode_batch_backward(gp, c_b, gtable_ext)
