"""AUC, precision@k and fold aggregation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) with ties counted as half.

    Uses midranks, O(N log N).
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    n_pos = int(np.sum(y == 1))
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined with a single class")
    ranks = rankdata(s)
    u = np.sum(ranks[y == 1]) - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_pairs(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Brute-force AUC over every (positive, negative) pair."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    pos, neg = s[y == 1], s[y == 0]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("AUC is undefined with a single class")
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (pos.size * neg.size)


def precision_at_k(predicted: Sequence[int], truth: Iterable[int], k: int) -> float:
    truth = set(truth)
    if k < 1 or k > len(predicted):
        raise ValueError(f"k={k} outside 1..{len(predicted)}")
    if not truth:
        raise ValueError("empty truth set")
    return len(set(predicted[:k]) & truth) / k


@dataclass
class EvalReport:
    task: str
    folds: list[dict] = field(default_factory=list)
    model: str | None = None

    @property
    def mean(self) -> dict:
        return aggregate(self.folds)

    def to_json(self) -> dict:
        out = {"task": self.task}
        if self.model is not None:
            out["model"] = self.model
        out["folds"] = self.folds
        out["mean"] = self.mean
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


def aggregate(folds: Sequence[dict]) -> dict:
    """Unweighted mean over folds of every metric (nested ``p_at`` included)."""
    if not folds:
        raise ValueError("no folds to aggregate")
    def mean(vals):
        # fsum is exact, so the mean does not depend on fold order
        return math.fsum(vals) / len(vals)

    out: dict = {}
    if "auc" in folds[0]:
        out["auc"] = mean([f["auc"] for f in folds])
    if "p_at" in folds[0]:
        out["p_at"] = {k: mean([f["p_at"][k] for f in folds]) for k in folds[0]["p_at"]}
    return out
