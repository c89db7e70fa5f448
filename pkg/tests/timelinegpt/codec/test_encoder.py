from datetime import date

import numpy as np
import pytest

from timelinegpt.codec import (ClinicalEvent, CodecConfig, PatientRecord, Visit, decode_sequence, encode_patient,
                               validate_sequence)


def _outpatient(day, *concepts):
    return Visit(9202, day, day, events=tuple(ClinicalEvent(c, "condition", day) for c in concepts))


def test_encode_single_outpatient_visit(outpatient_record):
    seq = encode_patient(outpatient_record)
    assert list(seq.tokens) == ["year:1995", "age:45", "gender:8532", "race:8527",
                                "[VS]", "VT:9202", "C:320128", "[VE]", "[END]"]
    assert seq.person_id == "p1"


def test_encode_inserts_day_gap_between_visits():
    record = PatientRecord("p", 1950, 8532, 8527, (
        _outpatient(date(2000, 1, 1), 1),
        _outpatient(date(2000, 1, 8), 2),
    ))
    tokens = list(encode_patient(record).tokens)
    ve = tokens.index("[VE]")
    assert tokens[ve:ve + 3] == ["[VE]", "D7", "[VS]"]


def test_encode_long_gap_keeps_true_interval():
    record = PatientRecord("p", 1950, 8532, 8527, (
        _outpatient(date(2000, 1, 1), 1),
        _outpatient(date(2003, 4, 15), 2),
    ))
    seq = encode_patient(record)
    ve = seq.tokens.index("[VE]")
    assert seq.tokens[ve + 1] == "[LT]"
    assert seq.intervals[ve + 1] == (date(2003, 4, 15) - date(2000, 1, 1)).days
    assert seq.long_term_intervals() == [1200]


def test_encode_measures_gap_from_inpatient_discharge():
    """Tests the gap after an inpatient stay runs from its end date, with intra-visit time tokens inside"""
    stay = Visit(9201, date(2000, 1, 1), date(2000, 1, 5), 8536, events=(
        ClinicalEvent(10, "condition", date(2000, 1, 1)),
        ClinicalEvent(20, "drug", date(2000, 1, 3)),
    ))
    record = PatientRecord("p", 1950, 8507, 8527, (stay, _outpatient(date(2000, 1, 12), 3)))
    tokens = list(encode_patient(record).tokens)
    assert tokens[4:] == ["[VS]", "VT:9201", "C:10", "i-D2", "R:20", "i-D2", "DIS:8536", "[VE]", "D7",
                          "[VS]", "VT:9202", "C:3", "[VE]", "[END]"]


def test_encode_multi_day_outpatient_visit():
    """Tests an outpatient visit spanning days keeps its events in order and the next gap runs from its end date"""
    visit = Visit(9202, date(1995, 3, 1), date(1995, 3, 3),
                  events=(ClinicalEvent(320128, "condition", date(1995, 3, 2)),))
    record = PatientRecord("p1", 1960, 8532, 8527, (visit, _outpatient(date(1995, 3, 10), 4)))
    seq = encode_patient(record)
    assert list(seq.tokens[4:]) == ["[VS]", "VT:9202", "i-D1", "C:320128", "i-D1", "[VE]", "D7",
                                    "[VS]", "VT:9202", "C:4", "[VE]", "[END]"]
    assert decode_sequence(seq, anchor=date(1995, 3, 1)) == record


def test_encode_without_intra_visit_time():
    stay = Visit(9201, date(2000, 1, 1), date(2000, 1, 5), 8536, events=(
        ClinicalEvent(10, "condition", date(2000, 1, 1)),
        ClinicalEvent(20, "drug", date(2000, 1, 3)),
    ))
    record = PatientRecord("p", 1950, 8507, 8527, (stay,))
    tokens = list(encode_patient(record, CodecConfig(intra_visit_time=False)).tokens)
    assert not any(t.startswith("i-D") for t in tokens)


def test_encode_without_intra_visit_time_still_measures_gap_from_end_date():
    visit = Visit(9202, date(2000, 1, 1), date(2000, 1, 4), events=(ClinicalEvent(1, "condition", date(2000, 1, 3)),))
    record = PatientRecord("p", 1950, 8532, 8527, (visit, _outpatient(date(2000, 1, 10), 2)))
    tokens = list(encode_patient(record, CodecConfig(intra_visit_time=False)).tokens)
    assert tokens[4:] == ["[VS]", "VT:9202", "C:1", "[VE]", "D6", "[VS]", "VT:9202", "C:2", "[VE]", "[END]"]


def test_encode_orders_same_day_events_by_domain_then_concept():
    day = date(2000, 1, 1)
    visit = Visit(9202, day, day, events=(
        ClinicalEvent(5, "procedure", day),
        ClinicalEvent(9, "condition", day),
        ClinicalEvent(3, "drug", day),
        ClinicalEvent(2, "condition", day),
    ))
    tokens = list(encode_patient(PatientRecord("p", 1950, 8507, 8527, (visit,))).tokens)
    assert tokens[6:10] == ["C:2", "C:9", "R:3", "P:5"]


def test_encode_same_day_visits_use_zero_gap():
    record = PatientRecord("p", 1950, 8532, 8527, (_outpatient(date(2000, 1, 1), 1), _outpatient(date(2000, 1, 1), 2)))
    assert "D0" in encode_patient(record).tokens


def test_encode_rejects_empty_record():
    with pytest.raises(ValueError):
        encode_patient(PatientRecord("p", 1950, 8532, 8527, ()))


def test_encode_rejects_event_outside_visit():
    visit = Visit(9202, date(2000, 1, 1), date(2000, 1, 1),
                  events=(ClinicalEvent(1, "condition", date(2000, 1, 2)),))
    with pytest.raises(ValueError):
        encode_patient(PatientRecord("p", 1950, 8532, 8527, (visit,)))


def test_encode_rejects_inpatient_without_discharge():
    visit = Visit(9201, date(2000, 1, 1), date(2000, 1, 3))
    with pytest.raises(ValueError):
        encode_patient(PatientRecord("p", 1950, 8532, 8527, (visit,)))


def test_encode_rejects_unordered_visits():
    record = PatientRecord("p", 1950, 8532, 8527, (_outpatient(date(2000, 2, 1), 1), _outpatient(date(2000, 1, 1), 2)))
    with pytest.raises(ValueError):
        encode_patient(record)


def test_round_trip_on_random_records(record_factory, codec_config):
    """Tests decode(encode(r)) rebuilds 1000 random records at day granularity"""
    rng = np.random.default_rng(7)
    for index in range(1000):
        record = record_factory(rng, f"p{index}")
        seq = encode_patient(record, codec_config)
        validate_sequence(seq.tokens, codec_config)
        decoded = decode_sequence(seq, codec_config, anchor=record.visits[0].start_date)
        assert decoded == record


def test_round_trip_keeps_long_term_gaps(record_factory, codec_config):
    rng = np.random.default_rng(11)
    for index in range(100):
        record = record_factory(rng, f"p{index}", max_gap=3000)
        seq = encode_patient(record, codec_config)
        assert decode_sequence(seq, codec_config, anchor=record.visits[0].start_date) == record


def test_decode_default_anchor_is_january_first(outpatient_record):
    decoded = decode_sequence(encode_patient(outpatient_record))
    assert decoded.visits[0].start_date == date(1995, 1, 1)
    assert decoded.birth_year == 1950
