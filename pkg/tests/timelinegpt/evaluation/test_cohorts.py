from datetime import date, timedelta

import pandas as pd
import pytest

from timelinegpt.codec import ClinicalEvent, PatientRecord, Visit, tables_from_records
from timelinegpt.codec.tokens import END, VE
from timelinegpt.evaluation import (CohortSpec, history_until, labeled_cohort, pathway_cohort, read_cohort,
                                   write_cohort)
from timelinegpt.tables import EventTables
from timelinegpt.util import dump_config, load_config

DRUG = 1000
CONDITION = 201826
OUTCOME = 4329847
START = date(2010, 1, 1)


def _outpatient(day, *events):
    when = START + timedelta(days=day)
    return Visit(9202, when, when, events=tuple(ClinicalEvent(c, d, when) for d, c in events))


def _drug_person(person_id, history_days, exposure_days):
    visits = [_outpatient(-history_days, ("condition", 320128))] if history_days else []
    visits += [_outpatient(day, ("drug", DRUG), ("condition", 320128)) for day in exposure_days]
    return PatientRecord(person_id, 1960, 8532, 8527, tuple(visits))


EVERY_120 = [0, 100, 220, 340, 460, 580, 700, 820, 940, 1060]


@pytest.fixture
def pathway_tables():
    return tables_from_records([
        _drug_person("p1", 400, EVERY_120),
        _drug_person("p2", 400, [d for d in EVERY_120 if d != 580]),
        _drug_person("p3", 100, EVERY_120),
        _drug_person("p4", 365, EVERY_120),
        _drug_person("p5", 364, EVERY_120),
        _drug_person("p6", 400, list(range(0, 841, 120)) + [1080]),
    ])


def test_pathway_cohort_hand_labeled(pathway_tables):
    result = pathway_cohort(pathway_tables, CohortSpec(name="drug", index_concepts={DRUG}))
    assert result.person_ids == ["p1", "p4"]
    assert result.n_persons == 6
    assert result.prevalence == pytest.approx(2 / 6)


def test_pathway_cohort_ignores_event_order(pathway_tables):
    shuffled = EventTables(pathway_tables.persons, pathway_tables.visits,
                           pathway_tables.events.sample(frac=1.0, random_state=3))
    spec = CohortSpec(index_concepts={DRUG})
    assert pathway_cohort(shuffled, spec).person_ids == pathway_cohort(pathway_tables, spec).person_ids


def test_pathway_cohort_without_exposures(pathway_tables):
    result = pathway_cohort(pathway_tables, CohortSpec(index_concepts={42}))
    assert result.person_ids == []
    assert result.prevalence == 0.0


def _condition_person(person_id, history_days, index_day, outcome_day=None):
    visits = [_outpatient(-history_days, ("condition", 320128)), _outpatient(index_day, ("condition", CONDITION))]
    if outcome_day is not None:
        visits.append(_outpatient(outcome_day, ("condition", OUTCOME)))
    return PatientRecord(person_id, 1970, 8507, 8527, tuple(visits))


def test_labeled_cohort():
    tables = tables_from_records([
        _condition_person("a", 400, 0, 100),
        _condition_person("b", 400, 0, 400),
        _condition_person("c", 10, 0, 100),
        PatientRecord("d", 1970, 8507, 8527, (_outpatient(0, ("condition", 320128)),)),
    ])
    spec = CohortSpec(index_concepts={CONDITION}, outcome_concepts={OUTCOME}, lookback_days=365,
                      outcome_window_end=365)
    examples = labeled_cohort(tables, spec)
    assert [(e.person_id, e.label) for e in examples] == [("a", 1), ("b", 0)]
    assert examples[0].index_date == START
    assert len(examples[0].record.visits) == 2
    tokens = examples[0].tokens()
    assert tokens[-1] == VE and END not in tokens


def test_visit_type_index_and_outcome():
    first = Visit(9201, START, START + timedelta(days=4), 8536)
    readmission = Visit(9201, START + timedelta(days=19), START + timedelta(days=21), 8536)
    late = Visit(9201, START + timedelta(days=60), START + timedelta(days=61), 8536)
    tables = tables_from_records([
        PatientRecord("r1", 1950, 8532, 8527, (first, readmission)),
        PatientRecord("r2", 1950, 8532, 8527, (first, late)),
    ])
    spec = CohortSpec(index_concepts={9201}, outcome_concepts={9201}, lookback_days=0, outcome_window_end=30)
    examples = labeled_cohort(tables, spec)
    assert [(e.person_id, e.label) for e in examples] == [("r1", 1), ("r2", 0)]
    assert examples[0].index_date == START + timedelta(days=4)


def test_descendant_expansion():
    tables = tables_from_records([_condition_person("a", 400, 0, 100)])
    ancestry = pd.DataFrame({"ancestor_id": [999], "descendant_id": [CONDITION]})
    spec = CohortSpec(index_concepts={999}, outcome_concepts={OUTCOME}, include_descendants=True)
    with pytest.raises(ValueError):
        labeled_cohort(tables, spec)
    with_ancestry = EventTables(tables.persons, tables.visits, tables.events, ancestry)
    assert [e.person_id for e in labeled_cohort(with_ancestry, spec)] == ["a"]


def test_history_until_closes_the_open_visit():
    stay = Visit(9201, START, START + timedelta(days=9), 8536, events=(
        ClinicalEvent(1, "condition", START), ClinicalEvent(2, "drug", START + timedelta(days=7))))
    record = PatientRecord("p", 1950, 8532, 8527, (stay, _outpatient(30)))
    cut = history_until(record, START + timedelta(days=4))
    assert len(cut.visits) == 1
    assert cut.visits[0].end_date == START + timedelta(days=4)
    assert [e.concept_id for e in cut.visits[0].events] == [1]


@pytest.mark.parametrize("overrides", [dict(index_concepts=set()), dict(lookback_days=-1),
                                       dict(outcome_window_start=10, outcome_window_end=5),
                                       dict(continuity_repetitions=0)])
def test_cohort_spec_validation(overrides):
    values = dict(index_concepts={DRUG})
    values.update(overrides)
    with pytest.raises(ValueError):
        CohortSpec(**values)


def test_cohort_spec_from_file(tmp_path):
    path = tmp_path / "cohort.yml"
    path.write_text("name: t2dm\nindex_concepts: [201826, 201254]\nlookback_days: 180\n", encoding="utf-8")
    spec = load_config(CohortSpec, path)
    assert spec.index_concepts == frozenset({201826, 201254})
    assert spec.lookback_days == 180
    assert "t2dm" in dump_config(CohortSpec(name="t2dm", index_concepts=[1]))


def test_cohort_file_round_trip(tmp_path):
    tables = tables_from_records([_condition_person("a", 400, 0, 100), _condition_person("b", 400, 0, 400)])
    spec = CohortSpec(index_concepts={CONDITION}, outcome_concepts={OUTCOME})
    examples = labeled_cohort(tables, spec)
    path = tmp_path / "cohort.csv"
    write_cohort(examples, path)
    assert path.read_text(encoding="utf-8").splitlines()[1] == "a,1,2010-01-01"

    restored = read_cohort(tables, path)
    assert [(e.person_id, e.label, e.index_date) for e in restored] == \
        [(e.person_id, e.label, e.index_date) for e in examples]
    assert restored[0].tokens() == examples[0].tokens()


@pytest.mark.parametrize("content", ["person_id,label\na,1\n", "person_id,label,index_date\na,2,2010-01-01\n",
                                     "person_id,label,index_date\nzz,1,2010-01-01\n"])
def test_invalid_cohort_files(tmp_path, content):
    tables = tables_from_records([_condition_person("a", 400, 0, 100)])
    path = tmp_path / "cohort.csv"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(ValueError):
        read_cohort(tables, path)
