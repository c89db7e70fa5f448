import logging
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import FrozenSet, List, Optional, Tuple

import pandas as pd

from timelinegpt.codec import CodecConfig, PatientRecord, Visit, encode_patient, records_from_tables
from timelinegpt.codec.tokens import END
from timelinegpt.tables import EventTables
from timelinegpt.tables.ancestry import descendants
from timelinegpt.tables.events import first_observation_dates
from timelinegpt.util import atomic_write


@dataclass(frozen=True)
class CohortSpec:
    """
    A cohort definition over the event tables.

    name: the cohort name, used in reports
    index_concepts: concepts whose first occurrence defines the index date; visit types match visits, dated by
        their end
    lookback_days: observed history required before the index date
    outcome_concepts: concepts, or visit types, labelling a person positive inside the outcome window
    outcome_window_start, outcome_window_end: the outcome window in days after the index date, both inclusive
    continuity_interval_days, continuity_repetitions: pathway cohorts need an index concept in each of this many
        consecutive intervals of this length from the index date
    include_descendants: expand the concept sets with the ancestry table
    """
    name: str = "cohort"
    index_concepts: FrozenSet[int] = frozenset()
    lookback_days: int = 365
    outcome_concepts: FrozenSet[int] = frozenset()
    outcome_window_start: int = 0
    outcome_window_end: int = 365
    continuity_interval_days: int = 120
    continuity_repetitions: int = 9
    include_descendants: bool = False

    def __post_init__(self):
        object.__setattr__(self, "index_concepts", frozenset(int(c) for c in self.index_concepts))
        object.__setattr__(self, "outcome_concepts", frozenset(int(c) for c in self.outcome_concepts))
        if not self.index_concepts:
            raise ValueError("CohortSpec field [index_concepts] cannot be empty.")
        if self.lookback_days < 0:
            raise ValueError("CohortSpec field [lookback_days] cannot be negative.")
        if not 0 <= self.outcome_window_start <= self.outcome_window_end:
            raise ValueError("CohortSpec outcome window must satisfy 0 <= start <= end.")
        if self.continuity_interval_days <= 0 or self.continuity_repetitions <= 0:
            raise ValueError("CohortSpec continuity interval and repetitions must be positive.")

    def expanded(self, tables: EventTables) -> "CohortSpec":
        """
        Returns the definition with both concept sets closed under the concept hierarchy when include_descendants
        is set.
        """
        if not self.include_descendants:
            return self
        if tables.ancestry is None:
            raise ValueError(f"Cohort [{self.name}] includes descendants but no ancestry table was loaded.")
        return CohortSpec(**{**self.__dict__,
                             "index_concepts": descendants(tables.ancestry, self.index_concepts),
                             "outcome_concepts": descendants(tables.ancestry, self.outcome_concepts),
                             "include_descendants": False})


@dataclass
class LabeledExample:
    """
    A cohort member: the history observed up to the index date and the binary outcome label.
    """
    person_id: str
    label: int
    index_date: date
    record: PatientRecord = field(repr=False)

    def tokens(self, cfg: CodecConfig = None) -> Tuple[str, ...]:
        """
        The encoded history without its closing [END], a prompt ending at a visit boundary.
        """
        tokens = encode_patient(self.record, cfg).tokens
        return tokens[:-1] if tokens[-1] == END else tokens


def history_until(record: PatientRecord, index_date: date) -> PatientRecord:
    """
    Cuts a record at a date: visits starting later are dropped, so are events after the date, and a visit still
    open on that date ends there.
    """
    visits = []
    for visit in record.visits:
        if visit.start_date > index_date:
            break
        visits.append(Visit(
            visit_concept_id=visit.visit_concept_id,
            start_date=visit.start_date,
            end_date=min(visit.end_date, index_date),
            discharge_concept_id=visit.discharge_concept_id,
            events=tuple(e for e in visit.events if e.date <= index_date),
        ))
    return PatientRecord(record.person_id, record.birth_year, record.gender_concept, record.race_concept,
                         tuple(visits))


def _index_date(record: PatientRecord, concepts: FrozenSet[int]) -> Optional[date]:
    dates = [v.end_date for v in record.visits if v.visit_concept_id in concepts]
    dates += [e.date for v in record.visits for e in v.events if e.concept_id in concepts]
    return min(dates) if dates else None


def _has_outcome(record: PatientRecord, spec: CohortSpec, index_date: date) -> bool:
    first = index_date + timedelta(days=spec.outcome_window_start)
    last = index_date + timedelta(days=spec.outcome_window_end)
    for visit in record.visits:
        if visit.visit_concept_id in spec.outcome_concepts and first <= visit.start_date <= last:
            return True
        if any(e.concept_id in spec.outcome_concepts and first <= e.date <= last for e in visit.events):
            return True
    return False


def labeled_cohort(tables: EventTables, spec: CohortSpec) -> List[LabeledExample]:
    """
    Builds a prediction cohort: every person with an index event and enough observed history before it,
    labelled by the occurrence of an outcome concept inside the outcome window.

    :param tables: the event tables
    :param spec: the cohort definition
    :return: the examples ordered by person id
    """
    spec = spec.expanded(tables)
    examples = []
    for record in records_from_tables(tables):
        index_date = _index_date(record, spec.index_concepts)
        if index_date is None:
            continue
        if (index_date - record.visits[0].start_date).days < spec.lookback_days:
            continue
        label = int(_has_outcome(record, spec, index_date))
        examples.append(LabeledExample(record.person_id, label, index_date, history_until(record, index_date)))
    n_positive = sum(e.label for e in examples)
    logging.info("Built cohort name=%s persons=%d positives=%d", spec.name, len(examples), n_positive)
    return examples


COHORT_COLUMNS = ("person_id", "label", "index_date")


def read_cohort(tables: EventTables, path) -> List[LabeledExample]:
    """
    Reads a precomputed cohort file with columns person_id, label and index_date (ISO-8601); histories are cut
    from the event tables at each index date.
    """
    frame = pd.read_csv(path, dtype={"person_id": str})
    missing = [c for c in COHORT_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"Cohort file {path} is missing column [{missing[0]}].")
    if not frame["label"].isin([0, 1]).all():
        raise ValueError(f"Cohort file {path} column [label] must hold 0 or 1.")
    records = {r.person_id: r for r in records_from_tables(tables)}
    examples = []
    for row in frame.itertuples(index=False):
        record = records.get(row.person_id)
        if record is None:
            raise ValueError(f"Cohort person [{row.person_id}] has no visits in the event tables.")
        index_date = pd.Timestamp(row.index_date).date()
        examples.append(LabeledExample(row.person_id, int(row.label), index_date, history_until(record, index_date)))
    logging.info("Read cohort path=%s persons=%d positives=%d", path, len(examples), sum(e.label for e in examples))
    return examples


def write_cohort(examples: List[LabeledExample], path):
    frame = pd.DataFrame([(e.person_id, e.label, e.index_date.isoformat()) for e in examples],
                         columns=list(COHORT_COLUMNS))
    atomic_write(path, lambda p: frame.to_csv(p, index=False))


@dataclass
class PathwayResult:
    person_ids: List[str]
    n_persons: int

    @property
    def prevalence(self) -> float:
        return len(self.person_ids) / self.n_persons if self.n_persons else 0.0


def pathway_cohort(tables: EventTables, spec: CohortSpec) -> PathwayResult:
    """
    Selects the persons on a continuous treatment pathway: their first exposure to the index concepts comes after
    at least lookback_days of observed history, and every one of the consecutive continuity intervals following it,
    [k * interval, (k + 1) * interval) days after the first exposure, holds an exposure.
    Observed history starts at the first recorded visit or event.
    """
    spec = spec.expanded(tables)
    events = tables.events[tables.events["concept_id"].isin(list(spec.index_concepts))]
    if events.empty:
        return PathwayResult([], tables.n_persons)
    first = events.groupby("person_id")["date"].min()
    observed = first_observation_dates(tables).reindex(first.index)
    eligible = first[(first - observed).dt.days >= spec.lookback_days]

    events = events[events["person_id"].isin(eligible.index)]
    offsets = (events["date"] - events["person_id"].map(eligible)).dt.days
    buckets = offsets // spec.continuity_interval_days
    covered = pd.DataFrame({"person_id": events["person_id"], "bucket": buckets})
    covered = covered[covered["bucket"] < spec.continuity_repetitions]
    n_buckets = covered.groupby("person_id")["bucket"].nunique()
    members = sorted(n_buckets[n_buckets == spec.continuity_repetitions].index)
    result = PathwayResult(members, tables.n_persons)
    logging.info("Built pathway cohort name=%s members=%d persons=%d prevalence=%.4f", spec.name, len(members),
                 tables.n_persons, result.prevalence)
    return result
