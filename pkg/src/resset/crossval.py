"""Fitting, scoring and k-fold evaluation for every model family.

Neural models (``resset``, ``flat-lstm``) go through :mod:`resset.trainer`;
``bow`` goes through :mod:`resset.baselines`. Both are stored as parameter
dicts in the same model-file format, so evaluation and prediction do not
care which family produced a file.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import bow_events, linear_from_params, train_logreg
from .codespace import CodeSpace
from .config import TrainConfig
from .data import Dataset, EncodedPatient, encode_dataset, n_targets
from .heads import topk
from .metrics import EvalReport, auc, precision_at_k
from .trainer import forward_events, make_folds, save_model, train_model


def fold_seed(seed: int, fold: int) -> int:
    """Training seed of one fold, independent of which process runs it."""
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def fit(dataset: Dataset, cfg: TrainConfig) -> dict:
    """Train the configured model on the whole dataset; returns its parameters."""
    cfg.validate()
    if cfg.model != "bow":
        return train_model(dataset, cfg=cfg).params
    space = dataset.space
    X, targets, _ = bow_events(encode_dataset(dataset), cfg.task, space.size, space.offset, cfg.max_visits)
    if not targets:
        raise ValueError(f"no {cfg.task} events in the training data")
    model = train_logreg(X, targets, l2=cfg.l2, task=cfg.task, n_out=n_targets(cfg.task, space))
    return model.params()


def score_events(P: dict, cfg: TrainConfig, space: CodeSpace,
                 patients: Sequence[EncodedPatient]) -> tuple[list, list]:
    """Per-event model outputs and targets, in patient order."""
    if cfg.model == "bow":
        X, targets, _ = bow_events(patients, cfg.task, space.size, space.offset, cfg.max_visits)
        if not targets:
            return [], []
        return list(linear_from_params(P, cfg.task).predict(X)), targets
    seqs, outs, _, _ = forward_events(P, cfg, space, patients)
    outputs, targets = [], []
    for s, o in zip(seqs, outs):
        for (_, target), out in zip(s.events, o):
            outputs.append(out)
            targets.append(target)
    return outputs, targets


def task_metrics(outputs: list, targets: list, task: str, topk_max: int) -> dict:
    if task == "readmission":
        return {"auc": auc(np.asarray(outputs, dtype=np.float64), np.asarray(targets, dtype=int)),
                "n_events": len(targets)}
    if not targets:
        raise ValueError(f"no {task} events to evaluate")
    p_at = {}
    for k in range(1, topk_max + 1):
        vals = [precision_at_k(topk(o, k), t, k) for o, t in zip(outputs, targets)]
        p_at[str(k)] = float(np.mean(vals))
    return {"p_at": p_at, "n_events": len(targets)}


def evaluate(P: dict, cfg: TrainConfig, dataset: Dataset) -> dict:
    outputs, targets = score_events(P, cfg, dataset.space, encode_dataset(dataset))
    return task_metrics(outputs, targets, cfg.task, cfg.topk_max)


def run_fold(dataset: Dataset, cfg: TrainConfig, fold: int, train_ids: list[str], test_ids: list[str],
             out_dir: str | Path | None = None) -> dict:
    fold_cfg = dataclasses.replace(cfg, seed=fold_seed(cfg.seed, fold))
    P = fit(dataset.subset(train_ids), fold_cfg)
    result = {"fold": fold, "n_train": len(train_ids), "n_test": len(test_ids)}
    result.update(evaluate(P, fold_cfg, dataset.subset(test_ids)))
    if out_dir is not None:
        save_model(Path(out_dir) / f"fold{fold}.model.json", P, fold_cfg, dataset.space)
    return result


def _run_fold_args(args):
    return run_fold(*args)


def run_crossval(dataset: Dataset, cfg: TrainConfig, out_dir: str | Path | None = None,
                 jobs: int = 1) -> EvalReport:
    """k-fold patient-level cross-validation; the report is identical for any ``jobs``."""
    cfg.validate()
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    folds = make_folds([p.id for p in dataset.patients], cfg.fold_count, cfg.seed)
    work = [(dataset, cfg, k, tr, te, out_dir) for k, (tr, te) in enumerate(folds)]
    if jobs == 1:
        results = [_run_fold_args(w) for w in work]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold_args, work))
    report = EvalReport(cfg.task, results, cfg.model)
    if out_dir is not None:
        (Path(out_dir) / "report.json").write_text(report.dumps(), encoding="utf-8")
    return report
