"""Code vocabularies and the shared disease/treatment embedding table."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .diffcore import Node, op_row

DISEASE = "disease"
TREATMENT = "treatment"
VOCAB_FILES = {DISEASE: "diseases.vocab", TREATMENT: "treatments.vocab"}


@dataclass
class CodeVocab:
    kind: str
    codes: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.kind not in VOCAB_FILES:
            raise ValueError(f"unknown vocab kind {self.kind!r}")
        self.codes = list(self.codes)
        self.index = {c: i for i, c in enumerate(self.codes)}
        if len(self.index) != len(self.codes):
            raise ValueError(f"duplicate codes in {self.kind} vocabulary")

    def __len__(self) -> int:
        return len(self.codes)

    def __contains__(self, code: str) -> bool:
        return code in self.index

    def id(self, code: str) -> int:
        return self.index[code]

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.codes).encode("utf-8")).hexdigest()

    def save(self, directory: str | Path) -> Path:
        path = Path(directory) / VOCAB_FILES[self.kind]
        path.write_text("".join(c + "\n" for c in self.codes), encoding="utf-8")
        return path

    @classmethod
    def load(cls, directory: str | Path, kind: str) -> "CodeVocab":
        path = Path(directory) / VOCAB_FILES[kind]
        lines = path.read_text(encoding="utf-8").splitlines()
        return cls(kind, [ln.strip() for ln in lines if ln.strip()])


@dataclass
class CodeSpace:
    """Both vocabularies under one id space: diseases first, then treatments."""

    diseases: CodeVocab
    treatments: CodeVocab

    @property
    def size(self) -> int:
        return len(self.diseases) + len(self.treatments)

    @property
    def offset(self) -> int:
        return len(self.diseases)

    def disease_id(self, code: str) -> int:
        return self.diseases.id(code)

    def treatment_id(self, code: str) -> int:
        return self.offset + self.treatments.id(code)

    def code(self, gid: int) -> tuple[str, str]:
        if gid < self.offset:
            return self.diseases.codes[gid], DISEASE
        return self.treatments.codes[gid - self.offset], TREATMENT

    def digests(self) -> dict[str, str]:
        return {DISEASE: self.diseases.digest(), TREATMENT: self.treatments.digest()}

    def save(self, directory: str | Path) -> None:
        self.diseases.save(directory)
        self.treatments.save(directory)

    @classmethod
    def load(cls, directory: str | Path) -> "CodeSpace":
        return cls(CodeVocab.load(directory, DISEASE), CodeVocab.load(directory, TREATMENT))


def init_embeddings(vocab_sizes: Sequence[int], n: int, rng_seed) -> np.ndarray:
    """Uniform[-0.1, 0.1] table with one row per code across all vocabularies."""
    if n < 1:
        raise ValueError("embedding dimension must be >= 1")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return rng.uniform(-0.1, 0.1, size=(int(sum(vocab_sizes)), n))


def lookup(table: Node, ids: Iterable[int]) -> list[Node]:
    rows = table.data.shape[0]
    out = []
    for i in ids:
        if not 0 <= i < rows:
            raise IndexError(f"code id {i} out of range (vocab size {rows})")
        out.append(op_row(table, int(i)))
    return out


def export_embeddings(table: np.ndarray, space: CodeSpace, path: str | Path) -> Path:
    table = np.asarray(table)
    if table.shape[0] != space.size:
        raise ValueError(f"table has {table.shape[0]} rows but vocab has {space.size} codes")
    n = table.shape[1] if table.ndim == 2 else 0
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["code", "kind"] + [f"v{j}" for j in range(n)])
        for gid in range(space.size):
            code, kind = space.code(gid)
            w.writerow([code, kind] + [repr(float(x)) for x in table[gid]])
    return path


def read_embeddings(path: str | Path) -> tuple[list[str], list[str], np.ndarray]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n = len(header) - 2
    codes = [r[0] for r in body]
    kinds = [r[1] for r in body]
    mat = np.array([[float(x) for x in r[2:]] for r in body], dtype=np.float64).reshape(len(body), n)
    return codes, kinds, mat
