import dataclasses
import json

import numpy as np
import pytest

from resset.baselines import bow_features
from resset.cohortsim import (
    SimConfig,
    cohort_stats,
    correct_treatments,
    generate,
    order_sensitivity_probe,
    read_latents,
    simulate_patient,
    write_cohort,
)
from resset.data import Dataset, encode_dataset

SMALL = SimConfig(n_patients=200, disease_vocab=20, treatment_vocab=40)


def test_same_seed_same_bytes(tmp_path):
    for d in ("a", "b"):
        write_cohort(*generate(SMALL), tmp_path / d, SMALL)
    for name in ("cohort.jsonl", "cohort.latents.jsonl", "cohort.stats.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    other, _ = generate(dataclasses.replace(SMALL, seed=1))
    assert [p.to_json() for p in other.patients] != [p.to_json() for p in generate(SMALL)[0].patients]


def test_patients_do_not_depend_on_cohort_size():
    a = simulate_patient(SMALL, 7)
    b, _ = generate(dataclasses.replace(SMALL, n_patients=10))
    assert b.patients[7].to_json() == a.patient.to_json()


def test_codes_in_vocab_and_visit_counts():
    ds, sims = generate(SMALL)
    assert len(ds) == 200
    for p in ds.patients:
        assert SMALL.min_visits <= len(p.visits) <= SMALL.max_visits
        assert p.readmit in (0, 1)
        for v in p.visits:
            assert v.dx and all(c in ds.space.diseases for c in v.dx)
            assert all(c in ds.space.treatments for c in v.tx)
    assert all(p.unknown == 0 for p in encode_dataset(ds))


def test_no_efficacy_never_improves():
    cfg = dataclasses.replace(SMALL, treatment_efficacy=0.0)
    _, sims = generate(cfg)
    for s in sims:
        path = s.states + [s.post_state]
        assert all(a <= b for a, b in zip(path, path[1:]))


def test_effective_treatment_lowers_readmission():
    base = dict(n_patients=5000, coding_noise=0.0)
    good = SimConfig(treatment_efficacy=1.0, adherence=1.0, **base)
    bad = SimConfig(treatment_efficacy=0.0, adherence=1.0, **base)
    rate = lambda cfg: np.mean([p.readmit for p in generate(cfg)[0].patients])  # noqa: E731
    assert rate(good) < rate(bad) - 0.05


def test_correct_treatments_block():
    cfg = SimConfig(disease_vocab=50, treatment_vocab=100)
    assert correct_treatments(cfg, 0) == [0, 1]
    assert correct_treatments(cfg, 49) == [98, 99]


def test_shuffling_visits_keeps_bag_of_words():
    ds, _ = generate(SMALL)
    rng = np.random.default_rng(0)
    for p in encode_dataset(ds)[:50]:
        shuffled = [p.visits[i] for i in rng.permutation(len(p.visits))]
        assert np.array_equal(bow_features(p.visits, ds.space.size), bow_features(shuffled, ds.space.size))


def test_order_matters_only_in_the_sequential_variant():
    seq, _ = generate(SimConfig())
    exch, _ = generate(SimConfig(exchangeable=True))
    assert order_sensitivity_probe(seq)["gap"] > 0.05
    assert abs(order_sensitivity_probe(exch)["gap"]) < 0.02


@pytest.mark.parametrize("bad", [
    dict(n_patients=0), dict(min_visits=1), dict(min_visits=5, max_visits=4),
    dict(adherence=1.5), dict(min_diseases=0), dict(latent_states=0),
])
def test_invalid_configs_rejected(bad):
    with pytest.raises(ValueError):
        generate(dataclasses.replace(SMALL, **bad))


def test_written_files_and_stats(tmp_path):
    ds, sims = generate(SMALL)
    out = write_cohort(ds, sims, tmp_path, SMALL)
    again = Dataset.load(tmp_path)
    assert [p.to_json() for p in again.patients] == [p.to_json() for p in ds.patients]
    lat = read_latents(tmp_path)
    assert [r["id"] for r in lat] == [p.id for p in ds.patients]
    assert all(len(r["states"]) == len(p.visits) for r, p in zip(lat, ds.patients))
    stats = json.loads((tmp_path / "cohort.stats.json").read_text())
    assert stats["config"]["n_patients"] == 200
    assert stats == json.loads(json.dumps(out["stats"]))
    st = cohort_stats(ds)
    assert st["visits"] == sum(len(p.visits) for p in ds.patients)
    assert 0 < st["readmission_rate"] < 1
