from typing import Iterable

import pandas as pd

from timelinegpt.tables.base import EventTables, Table, register_table

DEFAULT_INPATIENT_CONCEPTS = frozenset({9201, 262})


@register_table("visits")
class Visits(Table):
    """
    A class to represent the visits table. The discharge concept is only set for inpatient visits
    """
    columns = {
        "visit_id": "str",
        "person_id": "str",
        "visit_concept_id": "int64",
        "start_date": "date",
        "end_date": "date",
        "discharge_concept_id": "Int64",
    }


def visits_for_person(tables: EventTables, person_id) -> pd.DataFrame:
    visits = tables.visits
    return visits[visits["person_id"] == str(person_id)].sort_values(["start_date", "visit_id"])


def visit_counts(tables: EventTables) -> pd.Series:
    counts = tables.visits.groupby("person_id").size()
    return counts.reindex(tables.persons["person_id"], fill_value=0)


def hospitalized_person_ids(tables: EventTables, inpatient_concepts: Iterable[int] = DEFAULT_INPATIENT_CONCEPTS) -> set:
    visits = tables.visits
    return set(visits.loc[visits["visit_concept_id"].isin(list(inpatient_concepts)), "person_id"])
