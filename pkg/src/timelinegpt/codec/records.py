import logging
from dataclasses import dataclass, field
from datetime import date
from typing import FrozenSet, Iterable, List, Optional, Tuple

import pandas as pd

from timelinegpt.codec.tokens import DOMAIN_PREFIXES, DOMAIN_RANK
from timelinegpt.tables import EventTables, get_table
from timelinegpt.tables.visits import DEFAULT_INPATIENT_CONCEPTS


@dataclass(frozen=True)
class CodecConfig:
    """
    Options of the timeline codec.

    inpatient_visit_concepts: visit concepts treated as inpatient, they carry a discharge token
    intra_visit_time: insert "i-D{n}" tokens between events of a visit recorded on different days
    long_term_days: the gap assumed for an [LT] token when no true interval is known
    """
    inpatient_visit_concepts: FrozenSet[int] = DEFAULT_INPATIENT_CONCEPTS
    intra_visit_time: bool = True
    long_term_days: int = 1081

    def __post_init__(self):
        object.__setattr__(self, "inpatient_visit_concepts", frozenset(int(c) for c in self.inpatient_visit_concepts))
        if self.long_term_days <= 1080:
            raise ValueError("long_term_days must be greater than 1080.")

    def is_inpatient(self, visit_concept_id: int) -> bool:
        return visit_concept_id in self.inpatient_visit_concepts


@dataclass(frozen=True)
class ClinicalEvent:
    concept_id: int
    domain: str
    date: date

    def __post_init__(self):
        if self.concept_id == 0:
            raise ValueError("Unknown concepts (concept_id = 0) are not valid clinical events.")
        if self.domain not in DOMAIN_PREFIXES:
            raise ValueError(f"Unsupported event domain [{self.domain}].")

    def sort_key(self):
        return self.date, DOMAIN_RANK[self.domain], self.concept_id


@dataclass(frozen=True)
class Visit:
    visit_concept_id: int
    start_date: date
    end_date: date
    discharge_concept_id: Optional[int] = None
    events: Tuple[ClinicalEvent, ...] = ()

    def __post_init__(self):
        if self.end_date < self.start_date:
            raise ValueError(f"Visit ends [{self.end_date}] before it starts [{self.start_date}].")
        object.__setattr__(self, "events", tuple(sorted(self.events, key=ClinicalEvent.sort_key)))


@dataclass(frozen=True)
class PatientRecord:
    person_id: str
    birth_year: int
    gender_concept: int
    race_concept: int
    visits: Tuple[Visit, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "visits", tuple(self.visits))


def records_from_tables(tables: EventTables) -> List[PatientRecord]:
    """
    Assembles one PatientRecord per person from the flat tables. Events with concept_id 0 are dropped,
    persons without any visit are skipped.

    :param tables: the event tables
    :return: the records ordered by person id
    """
    events = tables.events[tables.events["concept_id"] != 0]
    events_by_visit = {visit_id: group for visit_id, group in events.groupby("visit_id", sort=False)}
    visits_by_person = {pid: group for pid, group in tables.visits.groupby("person_id", sort=False)}

    records = []
    skipped = 0
    for person in tables.persons.sort_values("person_id").itertuples(index=False):
        person_visits = visits_by_person.get(person.person_id)
        if person_visits is None or person_visits.empty:
            skipped += 1
            continue
        visits = []
        for visit in person_visits.sort_values(["start_date", "visit_id"]).itertuples(index=False):
            visit_events = events_by_visit.get(visit.visit_id)
            clinical_events = () if visit_events is None else tuple(
                ClinicalEvent(int(e.concept_id), e.domain, e.date.date())
                for e in visit_events.itertuples(index=False)
            )
            discharge = None if pd.isna(visit.discharge_concept_id) else int(visit.discharge_concept_id)
            visits.append(Visit(
                visit_concept_id=int(visit.visit_concept_id),
                start_date=visit.start_date.date(),
                end_date=visit.end_date.date(),
                discharge_concept_id=discharge,
                events=clinical_events,
            ))
        records.append(PatientRecord(
            person_id=str(person.person_id),
            birth_year=int(person.birth_year),
            gender_concept=int(person.gender_concept_id),
            race_concept=int(person.race_concept_id),
            visits=tuple(visits),
        ))
    if skipped:
        logging.info("Skipped persons without visits count=%d", skipped)
    return records


def tables_from_records(records: Iterable[PatientRecord]) -> EventTables:
    """
    Flattens records back into event tables. Visit ids are assigned as "{person_id}-{visit index}".
    """
    persons, visits, events = [], [], []
    for record in records:
        persons.append({
            "person_id": record.person_id,
            "birth_year": record.birth_year,
            "gender_concept_id": record.gender_concept,
            "race_concept_id": record.race_concept,
        })
        for index, visit in enumerate(record.visits):
            visit_id = f"{record.person_id}-{index}"
            visits.append({
                "visit_id": visit_id,
                "person_id": record.person_id,
                "visit_concept_id": visit.visit_concept_id,
                "start_date": pd.Timestamp(visit.start_date),
                "end_date": pd.Timestamp(visit.end_date),
                "discharge_concept_id": visit.discharge_concept_id,
            })
            for event in visit.events:
                events.append({
                    "person_id": record.person_id,
                    "visit_id": visit_id,
                    "domain": event.domain,
                    "concept_id": event.concept_id,
                    "date": pd.Timestamp(event.date),
                })

    def frame(rows, table_name):
        columns = list(get_table(table_name).columns)
        return pd.DataFrame(rows, columns=columns) if rows else pd.DataFrame({c: [] for c in columns})

    return EventTables(
        persons=frame(persons, "persons"),
        visits=frame(visits, "visits"),
        events=frame(events, "events"),
    )
