"""Predictions for new patients from a saved model file."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .baselines import bow_features, flat_tokens, linear_from_params
from .data import EventSequence, Patient, collate, encode_patient, n_targets
from .engine import run_batch
from .heads import topk
from .model import is_token_model
from .trainer import LoadedModel


def _visit_sequence(visits, cfg, events) -> EventSequence:
    if not is_token_model(cfg):
        return EventSequence("", list(visits), events)
    toks: list[int] = []
    ends = []
    for v in visits:
        toks.extend(flat_tokens([v], len(v[0]) + len(v[1])))
        ends.append(len(toks) - 1)
    cut = max(0, len(toks) - cfg.max_tokens)
    return EventSequence("", toks[cut:], [(ends[t] - cut, y) for t, y in events if ends[t] - cut >= 0])


def _run(model: LoadedModel, seq: EventSequence) -> np.ndarray:
    cfg, space = model.cfg, model.space
    batch = collate([seq], space.size, cfg.task, n_targets(cfg.task, space), tokens=is_token_model(cfg))
    return run_batch(model.params, batch, cfg, need_grad=False).outputs


def readmission_trajectory(model: LoadedModel, visits) -> list[float]:
    """Readmission probability after each visit (last ``max_visits`` visits)."""
    cfg = model.cfg
    visits = list(visits[-cfg.max_visits:])
    if cfg.model == "bow":
        X = np.array([bow_features(visits[: t + 1], model.space.size) for t in range(len(visits))])
        return [float(p) for p in linear_from_params(model.params, cfg.task).predict(X)]
    seq = _visit_sequence(visits, cfg, [(t, 0) for t in range(len(visits))])
    out = [float(p) for p in _run(model, seq)]
    # token models may have cut early visits off; pad with None
    return [None] * (len(visits) - len(out)) + out


def multilabel_scores(model: LoadedModel, visits) -> np.ndarray:
    """Scores over the target vocabulary after the patient's history.

    Disease models score the next visit's diseases; treatment models score
    the treatments of the last visit, whose own treatments are withheld.
    """
    cfg = model.cfg
    visits = list(visits[-cfg.max_visits:])
    if cfg.task == "treatment":
        visits[-1] = (visits[-1][0], ())
    if cfg.model == "bow":
        return linear_from_params(model.params, cfg.task).predict(bow_features(visits, model.space.size))[0]
    return _run(model, _visit_sequence(visits, cfg, [(len(visits) - 1, (0,))]))[0]


def predict(model: LoadedModel, patients: Sequence[Patient], k: int | None = None) -> dict:
    """Prediction records for each patient plus a count of skipped unknown codes."""
    cfg, space = model.cfg, model.space
    k = k or cfg.topk_max
    records = []
    unknown = 0
    for p in patients:
        if not p.visits:
            raise ValueError(f"patient {p.id} has no visits")
        enc = encode_patient(p, space)
        unknown += enc.unknown
        rec: dict = {"id": p.id, "unknown_codes": enc.unknown}
        if cfg.task == "readmission":
            traj = readmission_trajectory(model, enc.visits)
            rec["probabilities"] = traj
            rec["probability"] = traj[-1]
        else:
            scores = multilabel_scores(model, enc.visits)
            vocab = space.diseases if cfg.task == "disease" else space.treatments
            ids = topk(scores, min(k, len(scores)))
            rec["top"] = [{"code": vocab.codes[j], "score": float(scores[j])} for j in ids]
        records.append(rec)
    return {"task": cfg.task, "model": cfg.model, "predictions": records,
            "metadata": {"patients": len(records), "unknown_codes": unknown}}
