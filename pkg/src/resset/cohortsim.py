"""Seeded synthetic cohorts with a hidden severity process.

Each patient carries a latent severity state in ``0..K-1``. Visits emit
diseases concentrated on the codes tied to the current state, and
treatments that are "correct" for the recorded diseases with probability
``adherence``. After each visit the state improves with probability
``treatment_efficacy * coverage`` (coverage: share of recorded diseases
that got a correct treatment), otherwise worsens with probability
``worsen_prob``. The readmission label depends on the state after the final
discharge, so the order of visits carries information that code counts
alone do not.

With ``exchangeable=True`` states are drawn i.i.d. per visit and the label
depends on mean severity, so visit order carries no signal.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .codespace import CodeSpace, CodeVocab
from .data import Dataset, Patient, Visit, encode_dataset


@dataclass
class SimConfig:
    n_patients: int = 2000
    disease_vocab: int = 50
    treatment_vocab: int = 100
    latent_states: int = 4
    min_visits: int = 2
    max_visits: int = 10
    min_diseases: int = 1
    max_diseases: int = 6
    min_treatments: int = 0
    max_treatments: int = 5
    treatment_efficacy: float = 0.8
    adherence: float = 0.6
    worsen_prob: float = 0.4
    state_focus: float = 0.9
    label_slope: float = 4.0
    coding_noise: float = 0.05
    exchangeable: bool = False
    seed: int = 0

    def validate(self) -> None:
        if self.n_patients < 1:
            raise ValueError("n_patients must be >= 1")
        if self.disease_vocab < 1 or self.treatment_vocab < 1:
            raise ValueError("vocabulary sizes must be >= 1")
        if self.latent_states < 1:
            raise ValueError("latent_states must be >= 1")
        if self.min_visits < 2 or self.max_visits < self.min_visits:
            raise ValueError("need 2 <= min_visits <= max_visits")
        if not 1 <= self.min_diseases <= self.max_diseases:
            raise ValueError("need 1 <= min_diseases <= max_diseases")
        if not 0 <= self.min_treatments <= self.max_treatments:
            raise ValueError("need 0 <= min_treatments <= max_treatments")
        for name in ("treatment_efficacy", "adherence", "worsen_prob", "state_focus", "coding_noise"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


@dataclass
class SimPatient:
    patient: Patient
    states: list[int]
    post_state: int
    coverage: list[float]


def disease_codes(cfg: SimConfig) -> list[str]:
    return [f"D{j}" for j in range(cfg.disease_vocab)]


def treatment_codes(cfg: SimConfig) -> list[str]:
    return [f"T{j}" for j in range(cfg.treatment_vocab)]


def correct_treatments(cfg: SimConfig, disease: int) -> list[int]:
    r = max(1, cfg.treatment_vocab // cfg.disease_vocab)
    return sorted({(disease * r + u) % cfg.treatment_vocab for u in range(r)})


def _state_diseases(cfg: SimConfig) -> list[np.ndarray]:
    K = cfg.latent_states
    groups = [np.arange(s, cfg.disease_vocab, K) for s in range(K)]
    all_codes = np.arange(cfg.disease_vocab)
    return [g if g.size else all_codes for g in groups]


def _prior(K: int) -> np.ndarray:
    w = np.arange(K, 0, -1, dtype=np.float64)
    return w / w.sum()


def _readmit_prob(severity: float, cfg: SimConfig) -> float:
    mid = (cfg.latent_states - 1) / 2.0
    return float(1.0 / (1.0 + np.exp(-cfg.label_slope * (severity - mid))))


def _transition(s: int, coverage: float, cfg: SimConfig, rng: np.random.Generator) -> int:
    improve = cfg.treatment_efficacy * coverage
    u = rng.random()
    if u < improve:
        return max(0, s - 1)
    if u < improve + (1.0 - improve) * cfg.worsen_prob:
        return min(cfg.latent_states - 1, s + 1)
    return s


def _noisy(codes: set[int], vocab: int, noise: float, keep_one: bool, rng: np.random.Generator) -> set[int]:
    if noise == 0.0:
        return set(codes)
    kept = {c for c in sorted(codes) if rng.random() >= noise}
    if keep_one and not kept and codes:
        kept = {sorted(codes)[int(rng.integers(len(codes)))]}
    if rng.random() < noise:
        kept.add(int(rng.integers(vocab)))
    return kept


def simulate_patient(cfg: SimConfig, index: int) -> SimPatient:
    """One patient from its own RNG stream, seeded by (seed, index)."""
    rng = np.random.default_rng([cfg.seed, index])
    K = cfg.latent_states
    groups = _state_diseases(cfg)
    prior = _prior(K)
    T = int(rng.integers(cfg.min_visits, cfg.max_visits + 1))
    s = int(rng.choice(K, p=prior))
    visits, states, coverage = [], [], []
    for _ in range(T):
        if cfg.exchangeable:
            s = int(rng.choice(K, p=prior))
        states.append(s)
        m = int(rng.integers(cfg.min_diseases, cfg.max_diseases + 1))
        dx: set[int] = set()
        for _ in range(m):
            if rng.random() < cfg.state_focus:
                dx.add(int(rng.choice(groups[s])))
            else:
                dx.add(int(rng.integers(cfg.disease_vocab)))
        present = sorted(dx)
        n_tx = int(rng.integers(cfg.min_treatments, cfg.max_treatments + 1))
        tx: set[int] = set()
        for _ in range(n_tx):
            if rng.random() < cfg.adherence:
                d = present[int(rng.integers(len(present)))]
                options = correct_treatments(cfg, d)
                tx.add(options[int(rng.integers(len(options)))])
            else:
                tx.add(int(rng.integers(cfg.treatment_vocab)))
        cov = sum(1 for d in present if tx.intersection(correct_treatments(cfg, d))) / len(present)
        coverage.append(cov)
        rec_dx = _noisy(dx, cfg.disease_vocab, cfg.coding_noise, True, rng)
        rec_tx = _noisy(tx, cfg.treatment_vocab, cfg.coding_noise, False, rng)
        visits.append(Visit(tuple(f"D{j}" for j in sorted(rec_dx)), tuple(f"T{j}" for j in sorted(rec_tx))))
        if not cfg.exchangeable:
            s = _transition(s, cov, cfg, rng)
    if cfg.exchangeable:
        post = int(round(float(np.mean(states))))
        p_y = _readmit_prob(float(np.mean(states)), cfg)
    else:
        post = s
        p_y = _readmit_prob(post, cfg)
    y = int(rng.random() < p_y)
    return SimPatient(Patient(f"P{index:06d}", visits, y), states, post, coverage)


def generate(cfg: SimConfig) -> tuple[Dataset, list[SimPatient]]:
    cfg.validate()
    sims = [simulate_patient(cfg, i) for i in range(cfg.n_patients)]
    space = CodeSpace(CodeVocab("disease", disease_codes(cfg)), CodeVocab("treatment", treatment_codes(cfg)))
    return Dataset([s.patient for s in sims], space), sims


def cohort_stats(ds: Dataset) -> dict:
    visits = [v for p in ds.patients for v in p.visits]
    labels = [p.readmit for p in ds.patients if p.readmit is not None]
    return {
        "patients": len(ds.patients),
        "visits": len(visits),
        "diseases": len(ds.space.diseases),
        "treatments": len(ds.space.treatments),
        "mean_visits_per_patient": len(visits) / max(len(ds.patients), 1),
        "mean_diseases_per_visit": float(np.mean([len(v.dx) for v in visits])) if visits else 0.0,
        "mean_treatments_per_visit": float(np.mean([len(v.tx) for v in visits])) if visits else 0.0,
        "readmission_rate": float(np.mean(labels)) if labels else None,
    }


def write_cohort(ds: Dataset, sims: list[SimPatient], directory: str | Path, cfg: SimConfig | None = None) -> dict:
    """Dataset, vocab files, latent sidecar and stats JSON under ``directory``."""
    directory = Path(directory)
    path = ds.save(directory)
    with (directory / "cohort.latents.jsonl").open("w", encoding="utf-8") as fh:
        for s in sims:
            fh.write(json.dumps({"id": s.patient.id, "states": s.states, "post_state": s.post_state,
                                 "coverage": s.coverage}, separators=(",", ":")) + "\n")
    stats = cohort_stats(ds)
    if cfg is not None:
        stats["config"] = asdict(cfg)
    (directory / "cohort.stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n",
                                                 encoding="utf-8")
    return {"dataset": str(path), "stats": stats}


def read_latents(directory: str | Path) -> list[dict]:
    with (Path(directory) / "cohort.latents.jsonl").open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ------------------------------------------------------------------- probe


def _position_features(visits, space: CodeSpace, positions: int) -> np.ndarray:
    """Disease counts of the last ``positions`` visits (right-aligned), then whole-history counts."""
    V = space.size
    out = np.zeros(positions * len(space.diseases) + V)
    for k in range(min(positions, len(visits))):
        dx, _ = visits[-1 - k]
        for j in dx:
            out[k * len(space.diseases) + j] += 1.0
    base = positions * len(space.diseases)
    for dx, tx in visits:
        for j in dx:
            out[base + j] += 1.0
        for j in tx:
            out[base + j] += 1.0
    return out


def order_sensitivity_probe(ds: Dataset, seed: int = 0, positions: int = 3, l2: float = 1e-2) -> dict:
    """AUC of a logistic probe on true-order vs per-patient visit-shuffled features.

    The probe sees per-position disease counts for the last few visits plus
    whole-history counts; shuffling visits leaves the history counts intact
    and only destroys position. Trained on one half of the patients and
    scored on the other. Returns the two AUCs and their gap.
    """
    from .baselines import train_logreg
    from .metrics import auc

    enc = encode_dataset(ds)
    rng = np.random.default_rng(seed)
    y = np.array([p.readmit for p in enc], dtype=np.float64)
    shuffled = [[p.visits[i] for i in rng.permutation(len(p.visits))] for p in enc]
    Xa = np.array([_position_features(p.visits, ds.space, positions) for p in enc])
    Xb = np.array([_position_features(v, ds.space, positions) for v in shuffled])
    order = rng.permutation(len(enc))
    half = len(enc) // 2
    tr, te = order[:half], order[half:]
    result = {}
    for name, X in (("ordered", Xa), ("shuffled", Xb)):
        model = train_logreg(X[tr], y[tr], l2=l2, task="readmission")
        result[f"auc_{name}"] = auc(model.predict(X[te]), y[te].astype(int))
    result["gap"] = result["auc_ordered"] - result["auc_shuffled"]
    return result


def sim_config_fields() -> list[str]:
    return [f.name for f in fields(SimConfig)]
