import pandas as pd

from timelinegpt.tables.base import EventTables, Table, register_table

DOMAINS = ("condition", "drug", "procedure")


@register_table("events")
class Events(Table):
    """
    A class to represent clinical events: conditions, drug exposures and procedures
    """
    columns = {
        "person_id": "str",
        "visit_id": "str",
        "domain": "str",
        "concept_id": "int64",
        "date": "date",
    }


def events_for_person(tables: EventTables, person_id) -> pd.DataFrame:
    events = tables.events
    return events[events["person_id"] == str(person_id)].sort_values(["date", "domain", "concept_id"])


def first_observation_dates(tables: EventTables) -> pd.Series:
    """
    The date of the first recorded event or visit of every person.
    """
    starts = pd.concat([
        tables.events[["person_id", "date"]],
        tables.visits[["person_id", "start_date"]].rename(columns={"start_date": "date"}),
    ])
    return starts.groupby("person_id")["date"].min()
