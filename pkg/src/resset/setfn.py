"""Normalized, permutation-invariant set function.

    f(S) = relu(sum(S)) / (eps + ||relu(sum(S))||)

The output norm is strictly below 1, approaches 1 for large sums and 0 as
the rectified sum vanishes. Elements are always summed in ascending code-id
order, which makes the result bit-identical under any permutation of the
input bag.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .codespace import lookup
from .diffcore import (
    DimensionError,
    Node,
    constant,
    op_activation,
    op_add_const,
    op_reciprocal,
    op_reduce,
    op_scale,
    op_sum_nodes,
)


@dataclass(frozen=True)
class SetFnConfig:
    epsilon: float = 1e-6

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


def canonical_ids(ids: Iterable[int]) -> list[int]:
    """Deduplicate and sort; the order every sum runs in."""
    return sorted(set(int(i) for i in ids))


def set_encode(vectors: Sequence[Node], cfg: SetFnConfig = SetFnConfig(), dim: int | None = None) -> Node:
    if not vectors:
        if dim is None:
            raise DimensionError("empty set needs an explicit dimension")
        return constant(np.zeros(dim))
    n = vectors[0].data.shape
    for v in vectors:
        if v.data.shape != n or v.data.ndim != 1:
            raise DimensionError("set elements must be vectors of one dimension")
    rect = op_activation("relu", op_sum_nodes(vectors))
    inv = op_reciprocal(op_add_const(op_reduce("l2norm", rect), cfg.epsilon))
    return op_scale(rect, inv)


def encode_ids(table: Node, ids: Iterable[int], cfg: SetFnConfig = SetFnConfig()) -> Node:
    return set_encode(lookup(table, canonical_ids(ids)), cfg, dim=table.data.shape[1])


# ------------------------------------------------------------ batched form
#
# ``idx`` is an int array [N, K] of canonical ids padded with ``pad`` (the
# index of an all-zero row appended to the table).


def encode_batch(table_ext: np.ndarray, idx: np.ndarray, eps: float):
    raw = table_ext[idx].sum(axis=1)
    s = np.maximum(raw, 0.0)
    r = np.sqrt(np.sum(s * s, axis=1))
    den = eps + r
    out = s / den[:, None]
    return out, (idx, raw, s, r, den)


def encode_batch_backward(g: np.ndarray, cache, gtable_ext: np.ndarray) -> None:
    """Accumulate d(loss)/d(table) into ``gtable_ext`` in place."""
    idx, raw, s, r, den = cache
    dot = np.sum(g * s, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(r > 0.0, dot / (den * den * r), 0.0)
    gs = g / den[:, None] - s * coef[:, None]
    graw = gs * (raw > 0.0)
    np.add.at(gtable_ext, idx, graw[:, None, :])
