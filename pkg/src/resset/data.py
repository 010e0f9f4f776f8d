"""Patient records, the JSON-lines cohort format, and prediction events.

A cohort directory holds ``cohort.jsonl`` (one patient per line),
``diseases.vocab`` and ``treatments.vocab``. Each patient line looks like::

    {"id": "P0001", "visits": [{"dx": ["D12"], "tx": ["T7"]}], "readmit": 0}
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .codespace import CodeSpace, CodeVocab

log = logging.getLogger(__name__)

COHORT_FILE = "cohort.jsonl"


@dataclass(frozen=True)
class Visit:
    dx: tuple[str, ...]
    tx: tuple[str, ...] = ()


@dataclass
class Patient:
    id: str
    visits: list[Visit]
    readmit: int | None = None

    def to_json(self) -> dict:
        out = {"id": self.id, "visits": [{"dx": list(v.dx), "tx": list(v.tx)} for v in self.visits]}
        if self.readmit is not None:
            out["readmit"] = int(self.readmit)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Patient":
        visits = [Visit(tuple(v.get("dx", ())), tuple(v.get("tx", ()))) for v in obj["visits"]]
        y = obj.get("readmit")
        return cls(str(obj["id"]), visits, None if y is None else int(y))


def read_patients(path: str | Path) -> list[Patient]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(Patient.from_json(json.loads(line)))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed patient record ({exc})") from None
    return out


def write_patients(patients: Iterable[Patient], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for p in patients:
            fh.write(json.dumps(p.to_json(), separators=(",", ":")) + "\n")


@dataclass
class Dataset:
    patients: list[Patient]
    space: CodeSpace

    def __len__(self) -> int:
        return len(self.patients)

    def subset(self, ids: Iterable[str]) -> "Dataset":
        keep = set(ids)
        return Dataset([p for p in self.patients if p.id in keep], self.space)

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.space.save(directory)
        write_patients(self.patients, directory / COHORT_FILE)
        return directory / COHORT_FILE

    @classmethod
    def load(cls, path: str | Path) -> "Dataset":
        """Load from a cohort directory or a ``.jsonl`` file with vocab files beside it."""
        path = Path(path)
        directory, jsonl = (path, path / COHORT_FILE) if path.is_dir() else (path.parent, path)
        return cls(read_patients(jsonl), CodeSpace.load(directory))

    @classmethod
    def from_patients(cls, patients: list[Patient]) -> "Dataset":
        """Build vocabularies from the codes present, in sorted order."""
        dx = sorted({c for p in patients for v in p.visits for c in v.dx})
        tx = sorted({c for p in patients for v in p.visits for c in v.tx})
        return cls(patients, CodeSpace(CodeVocab("disease", dx), CodeVocab("treatment", tx)))


# ---------------------------------------------------------------- encoding


@dataclass
class EncodedPatient:
    id: str
    visits: list[tuple[tuple[int, ...], tuple[int, ...]]]
    readmit: int | None
    unknown: int = 0


def encode_patient(p: Patient, space: CodeSpace) -> EncodedPatient:
    """Global canonical ids per visit; unknown codes are dropped and counted."""
    unknown = 0
    visits = []
    for v in p.visits:
        dx, tx = set(), set()
        for c in v.dx:
            if c in space.diseases:
                dx.add(space.disease_id(c))
            else:
                unknown += 1
        for c in v.tx:
            if c in space.treatments:
                tx.add(space.treatment_id(c))
            else:
                unknown += 1
        visits.append((tuple(sorted(dx)), tuple(sorted(tx))))
    if unknown:
        log.warning("patient %s: dropped %d unknown codes", p.id, unknown)
    return EncodedPatient(p.id, visits, p.readmit, unknown)


def encode_dataset(ds: Dataset) -> list[EncodedPatient]:
    return [encode_patient(p, ds.space) for p in ds.patients]


# ------------------------------------------------------------------ events


@dataclass
class EventSequence:
    """One unrolled input sequence and the prediction events read off it.

    ``steps`` are (dx ids, tx ids) pairs for visit-level models or single
    code ids for token-level ones. Each event is (step index, target) where
    the target is a 0/1 label or a tuple of local target ids.
    """

    patient: str
    steps: list
    events: list[tuple[int, object]] = field(default_factory=list)


def n_targets(task: str, space: CodeSpace) -> int:
    return {"readmission": 1, "disease": len(space.diseases), "treatment": len(space.treatments)}[task]


def visit_events(p: EncodedPatient, task: str, offset: int,
                 max_visits: int) -> list[tuple[list, list[tuple[int, object]]]]:
    """Groups of (visits fed to one unroll, [(event position, target), ...]).

    Only the last ``max_visits`` visits are used. Readmission has one event
    at the final visit. Disease prediction reads one event per consecutive
    visit pair off a single unroll. Treatment recommendation has one event
    per visit, each on its own prefix with that visit's treatments withheld.
    Events with empty targets are skipped.
    """
    visits = list(p.visits[-max_visits:])
    if task == "readmission":
        if p.readmit is None:
            raise ValueError(f"patient {p.id} has no readmission label")
        return [(visits, [(len(visits) - 1, int(p.readmit))])]
    if task == "disease":
        evs = [(t, tuple(visits[t + 1][0])) for t in range(len(visits) - 1) if visits[t + 1][0]]
        return [(visits[:-1], evs)] if evs else []
    if task == "treatment":
        out = []
        for t, (dx, tx) in enumerate(visits):
            if tx:
                out.append((visits[:t] + [(dx, ())], [(t, tuple(i - offset for i in tx))]))
        return out
    raise ValueError(f"unknown task {task!r}")


def build_sequences(p: EncodedPatient, task: str, offset: int, max_visits: int = 10,
                    tokens: bool = False, max_tokens: int = 100,
                    rng: np.random.Generator | None = None) -> list[EventSequence]:
    """Turn a patient into model input sequences with their events.

    Token-level sequences make every code a step: visit order is kept,
    within-visit order is shuffled by ``rng`` (sorted when ``rng`` is None),
    and only the last ``max_tokens`` tokens are kept. An event sits on the
    last token of its visit.
    """
    out = []
    for visits, events in visit_events(p, task, offset, max_visits):
        if not tokens:
            out.append(EventSequence(p.id, list(visits), list(events)))
            continue
        toks: list[int] = []
        ends = []
        for dx, tx in visits:
            codes = list(dx) + list(tx)
            if rng is not None:
                codes = [codes[j] for j in rng.permutation(len(codes))]
            toks.extend(codes)
            ends.append(len(toks) - 1)
        cut = max(0, len(toks) - max_tokens)
        kept = [(ends[t] - cut, target) for t, target in events if ends[t] - cut >= 0]
        if kept:
            out.append(EventSequence(p.id, toks[cut:], kept))
    return out


@dataclass
class Batch:
    lengths: np.ndarray
    ev_t: np.ndarray
    ev_b: np.ndarray
    targets: np.ndarray
    dx_idx: np.ndarray | None = None
    tx_idx: np.ndarray | None = None
    tok_idx: np.ndarray | None = None

    @property
    def T(self) -> int:
        return int(self.lengths.max())

    @property
    def B(self) -> int:
        return len(self.lengths)

    @property
    def n_events(self) -> int:
        return len(self.ev_t)


def collate(seqs: Sequence[EventSequence], pad: int, task: str, n_out: int, tokens: bool = False) -> Batch:
    """Pad sequences into [T, B] index arrays; ``pad`` indexes an all-zero embedding row."""
    B = len(seqs)
    lengths = np.array([len(s.steps) for s in seqs], dtype=np.intp)
    T = int(lengths.max())
    ev_t, ev_b, tg = [], [], []
    for b, s in enumerate(seqs):
        for t, target in s.events:
            ev_t.append(t)
            ev_b.append(b)
            tg.append(target)
    E = len(tg)
    if task == "readmission":
        targets = np.array(tg, dtype=np.float64).reshape(E, 1)
    else:
        targets = np.zeros((E, n_out))
        for e, ids in enumerate(tg):
            targets[e, list(ids)] = 1.0
    batch = Batch(lengths, np.array(ev_t, dtype=np.intp), np.array(ev_b, dtype=np.intp), targets)
    if tokens:
        tok = np.full((T, B), pad, dtype=np.intp)
        for b, s in enumerate(seqs):
            tok[: len(s.steps), b] = s.steps
        batch.tok_idx = tok
        return batch
    kd = max(1, max(len(dx) for s in seqs for dx, _ in s.steps))
    kt = max(1, max(len(tx) for s in seqs for _, tx in s.steps))
    dx_idx = np.full((T, B, kd), pad, dtype=np.intp)
    tx_idx = np.full((T, B, kt), pad, dtype=np.intp)
    for b, s in enumerate(seqs):
        for t, (dx, tx) in enumerate(s.steps):
            dx_idx[t, b, : len(dx)] = dx
            tx_idx[t, b, : len(tx)] = tx
    batch.dx_idx, batch.tx_idx = dx_idx, tx_idx
    return batch
