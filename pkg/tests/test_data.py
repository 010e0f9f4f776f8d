import json

import numpy as np
import pytest

from resset.data import (
    Dataset,
    Patient,
    Visit,
    build_sequences,
    collate,
    encode_patient,
    read_patients,
    visit_events,
)

from conftest import random_dataset, space_of


def _enc(visits, readmit=1):
    return encode_patient(Patient("p", [Visit(tuple(d), tuple(t)) for d, t in visits], readmit), space_of(5, 4))


def test_patient_json_round_trip(tmp_path):
    ds = random_dataset(4)
    ds.save(tmp_path)
    line = (tmp_path / "cohort.jsonl").read_text().splitlines()[0]
    obj = json.loads(line)
    assert set(obj) == {"id", "visits", "readmit"}
    again = Dataset.load(tmp_path)
    assert [p.to_json() for p in again.patients] == [p.to_json() for p in ds.patients]
    assert Dataset.load(tmp_path / "cohort.jsonl").space.digests() == ds.space.digests()


def test_malformed_line_reports_location(tmp_path):
    f = tmp_path / "bad.jsonl"
    f.write_text('{"id": "a", "visits": []}\n{"visits": []}\n')
    with pytest.raises(ValueError, match=":2:"):
        read_patients(f)


def test_encoding_dedups_sorts_and_counts_unknown():
    p = Patient("p", [Visit(("D3", "D1", "D3", "DX"), ("T2", "TY"))], 0)
    e = encode_patient(p, space_of(5, 4))
    assert e.visits == [((1, 3), (7,))]
    assert e.unknown == 2


def test_readmission_event_at_last_visit_and_truncation():
    visits = [(["D0"], []), (["D1"], ["T0"]), (["D2"], [])]
    groups = visit_events(_enc(visits), "readmission", 5, max_visits=2)
    assert len(groups) == 1
    seq, events = groups[0]
    assert seq == [((1,), (5,)), ((2,), ())]
    assert events == [(1, 1)]


def test_disease_events_predict_next_visit():
    visits = [(["D0"], []), (["D1", "D2"], ["T0"]), (["D4"], [])]
    (seq, events), = visit_events(_enc(visits), "disease", 5, 10)
    assert seq == [((0,), ()), ((1, 2), (5,))]
    assert events == [(0, (1, 2)), (1, (4,))]


def test_treatment_events_withhold_current_treatments():
    visits = [(["D0"], ["T1"]), (["D1"], []), (["D2"], ["T0", "T3"])]
    groups = visit_events(_enc(visits), "treatment", 5, 10)
    assert groups[0] == ([((0,), ())], [(0, (1,))])
    assert groups[1] == ([((0,), (6,)), ((1,), ()), ((2,), ())], [(2, (0, 3))])


def test_token_sequences_cap_and_event_positions():
    visits = [(["D0", "D1"], ["T0"]), (["D2"], ["T1", "T2"])]
    seqs = build_sequences(_enc(visits), "readmission", 5, tokens=True, max_tokens=4)
    assert seqs[0].steps == [5, 2, 6, 7]
    assert seqs[0].events == [(3, 1)]
    shuffled = build_sequences(_enc(visits), "readmission", 5, tokens=True, rng=np.random.default_rng(0))
    assert sorted(shuffled[0].steps[:3]) == [0, 1, 5]


def test_collate_pads_with_pad_index():
    ds = random_dataset(3)
    from resset.data import encode_dataset

    seqs = [s for p in encode_dataset(ds) for s in build_sequences(p, "disease", ds.space.offset)]
    batch = collate(seqs, ds.space.size, "disease", len(ds.space.diseases))
    assert batch.dx_idx.shape[:2] == (batch.T, batch.B)
    for b, s in enumerate(seqs):
        assert np.all(batch.dx_idx[len(s.steps):, b] == ds.space.size)
    assert batch.targets.shape == (batch.n_events, len(ds.space.diseases))
