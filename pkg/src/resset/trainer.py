"""Adam, patient-level folds, the mini-batch training loop and model files."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .codespace import CodeSpace, CodeVocab
from .config import TrainConfig
from .data import Dataset, EncodedPatient, EventSequence, build_sequences, collate, encode_dataset, n_targets
from .diffcore import backward
from .engine import run_batch
from .model import as_nodes, batch_graph_loss, init_params, is_token_model
from .recurrent import dropout_masks

log = logging.getLogger(__name__)

MODEL_FORMAT = "resset-model"
MODEL_VERSION = 1


class TrainingError(RuntimeError):
    pass


class ModelFileError(ValueError):
    pass


# -------------------------------------------------------------------- adam


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict, grads: Mapping[str, np.ndarray], state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam update, in place. Returns ``(params, state)``."""
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise TrainingError(f"non-finite gradient for {', '.join(sorted(bad))} at step {state.step + 1}")
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for k, g in grads.items():
        if k not in state.m:
            state.m[k] = np.zeros_like(params[k])
            state.v[k] = np.zeros_like(params[k])
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        params[k] -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
    return params, state


# ------------------------------------------------------------------- folds


def make_folds(patients: Sequence[str], fold_count: int, seed: int) -> list[tuple[list[str], list[str]]]:
    """Patient-level (train, test) splits; test sets differ in size by at most one."""
    ids = list(patients)
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate patient ids")
    if fold_count < 2:
        raise ValueError("fold_count must be >= 2")
    if len(ids) < fold_count:
        raise ValueError(f"{len(ids)} patients cannot fill {fold_count} folds")
    order = np.random.default_rng(seed).permutation(len(ids))
    chunks = np.array_split(order, fold_count)
    out = []
    for k in range(fold_count):
        test = sorted(int(i) for i in chunks[k])
        test_set = set(test)
        out.append(([ids[i] for i in range(len(ids)) if i not in test_set], [ids[i] for i in test]))
    return out


# ---------------------------------------------------------------- training


@dataclass
class TrainResult:
    params: dict
    losses: list[float]
    cfg: TrainConfig
    space: CodeSpace


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators so e.g. toggling dropout never changes batch order."""
    names = ("init", "shuffle", "dropout", "tokens")
    return dict(zip(names, (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(len(names)))))


def patient_sequences(patients: Sequence[EncodedPatient], cfg: TrainConfig, offset: int,
                      rng: np.random.Generator | None = None) -> list[list[EventSequence]]:
    return [build_sequences(p, cfg.task, offset, cfg.max_visits, tokens=is_token_model(cfg),
                            max_tokens=cfg.max_tokens, rng=rng) for p in patients]


def _batches(n: int, size: int, order: np.ndarray):
    for start in range(0, n, size):
        yield order[start:start + size]


def train_model(dataset: Dataset, task: str | None = None, cfg: TrainConfig | None = None,
                params: dict | None = None) -> TrainResult:
    """Mini-batch Adam on the mean per-event loss (plus state penalty)."""
    cfg = dataclasses.replace(cfg or TrainConfig(), **({"task": task} if task else {}))
    cfg.validate()
    if cfg.model == "bow":
        raise ValueError("bag-of-words models are trained with resset.baselines")
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    short = [p.id for p in dataset.patients if len(p.visits) < 2]
    if short:
        raise ValueError(f"patients need at least 2 visits; {short[0]} has fewer")

    space = dataset.space
    streams = rng_streams(cfg.seed)
    n_out = n_targets(cfg.task, space)
    P = params if params is not None else init_params(
        cfg, [len(space.diseases), len(space.treatments)], n_out, streams["init"])
    encoded = encode_dataset(dataset)
    tokens = is_token_model(cfg)
    fixed = None if tokens else patient_sequences(encoded, cfg, space.offset)
    state = AdamState()
    losses: list[float] = []

    for epoch in range(cfg.epochs):
        per_patient = fixed if fixed is not None else patient_sequences(
            encoded, cfg, space.offset, rng=streams["tokens"])
        order = streams["shuffle"].permutation(len(per_patient))
        total, events = 0.0, 0
        for bi, idx in enumerate(_batches(len(order), cfg.batch_size, order)):
            seqs = [s for i in idx for s in per_patient[i]]
            if not seqs:
                continue
            batch = collate(seqs, space.size, cfg.task, n_out, tokens=tokens)
            masks = None
            if cfg.dropout > 0.0:
                masks = dropout_masks(streams["dropout"], (batch.T, batch.B, cfg.embed_dim), cfg.dropout)
            if cfg.backend == "graph":
                nodes = as_nodes(P)
                loss_node = batch_graph_loss(nodes, seqs, cfg, training=True, masks=masks)
                backward(loss_node)
                loss = float(loss_node.data[0])
                grads = {k: nodes[k].grad for k in P}
            else:
                res = run_batch(P, batch, cfg, masks=masks)
                loss, grads = res.loss, res.grads
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss in epoch {epoch}, batch {bi}")
            adam_step(P, grads, state, cfg)
            total += loss * batch.n_events
            events += batch.n_events
        losses.append(total / max(events, 1))
        log.debug("epoch %d loss %.6f", epoch, losses[-1])
    return TrainResult(P, losses, cfg, space)


# -------------------------------------------------------------- evaluation


def forward_events(P: dict, cfg: TrainConfig, space: CodeSpace,
                   patients: Sequence[EncodedPatient], batch_size: int = 64):
    """Eval-mode pass. Returns ``(sequences, outputs, loss_sum, n_events)``.

    ``outputs[i]`` lists the per-event outputs of ``sequences[i]``.
    """
    seqs = [s for group in patient_sequences(patients, cfg, space.offset) for s in group]
    n_out = n_targets(cfg.task, space)
    outs: list[list] = []
    loss_sum, events = 0.0, 0
    for start in range(0, len(seqs), batch_size):
        chunk = seqs[start:start + batch_size]
        batch = collate(chunk, space.size, cfg.task, n_out, tokens=is_token_model(cfg))
        res = run_batch(P, batch, cfg, need_grad=False)
        loss_sum += res.loss_sum
        events += res.n_events
        e = 0
        for s in chunk:
            outs.append([res.outputs[e + j] for j in range(len(s.events))])
            e += len(s.events)
    return seqs, outs, loss_sum, events


def evaluate_loss(P: dict, dataset: Dataset, cfg: TrainConfig) -> float:
    """Mean per-event loss (penalty included) in eval mode, no dropout."""
    _, _, loss_sum, events = forward_events(P, cfg, dataset.space, encode_dataset(dataset))
    return loss_sum / max(events, 1)


# ------------------------------------------------------------- model files


def save_model(path: str | Path, params: Mapping[str, np.ndarray], cfg: TrainConfig,
               space: CodeSpace, extra: dict | None = None) -> Path:
    """Write a self-describing JSON model file; floats use round-trip repr."""
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "config": dataclasses.asdict(cfg),
        "vocab": {
            "disease": {"sha256": space.diseases.digest(), "codes": space.diseases.codes},
            "treatment": {"sha256": space.treatments.digest(), "codes": space.treatments.codes},
        },
        "tensors": {k: {"shape": list(np.shape(v)), "data": np.asarray(v, dtype=np.float64).ravel().tolist()}
                    for k, v in sorted(params.items())},
    }
    if extra:
        doc["extra"] = extra
    path = Path(path)
    path.write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8")
    return path


@dataclass
class LoadedModel:
    params: dict
    cfg: TrainConfig
    space: CodeSpace
    extra: dict


def load_model(path: str | Path, space: CodeSpace | None = None) -> LoadedModel:
    """Read a model file; refuses a ``space`` whose vocabularies differ from training."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("format") != MODEL_FORMAT:
            raise ModelFileError(f"{path}: not a {MODEL_FORMAT} file")
        if doc.get("version") != MODEL_VERSION:
            raise ModelFileError(f"{path}: unsupported model version {doc.get('version')}")
        cfg = TrainConfig(**doc["config"])
        stored = CodeSpace(CodeVocab("disease", doc["vocab"]["disease"]["codes"]),
                           CodeVocab("treatment", doc["vocab"]["treatment"]["codes"]))
        for kind, vocab in (("disease", stored.diseases), ("treatment", stored.treatments)):
            if vocab.digest() != doc["vocab"][kind]["sha256"]:
                raise ModelFileError(f"{path}: {kind} vocabulary does not match its hash")
        params = {k: np.array(t["data"], dtype=np.float64).reshape(t["shape"])
                  for k, t in doc["tensors"].items()}
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFileError):
            raise
        raise ModelFileError(f"{path}: corrupt model file ({exc})") from None
    if space is not None and space.digests() != stored.digests():
        raise ModelFileError("vocabulary mismatch: the model was trained on different code vocabularies")
    return LoadedModel(params, cfg, stored, doc.get("extra", {}))
