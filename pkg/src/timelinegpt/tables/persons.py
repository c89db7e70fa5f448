import pandas as pd

from timelinegpt.tables.base import EventTables, Table, register_table

FEMALE_CONCEPT_ID = 8532


@register_table("persons")
class Persons(Table):
    """
    A class to represent the persons table, one row per person
    """
    columns = {
        "person_id": "str",
        "birth_year": "int64",
        "gender_concept_id": "int64",
        "race_concept_id": "int64",
    }


def get_person(tables: EventTables, person_id) -> pd.Series:
    rows = tables.persons[tables.persons["person_id"] == str(person_id)]
    if rows.empty:
        raise ValueError(f"Person [{person_id}] was not found.")
    return rows.iloc[0]


def female_person_ids(tables: EventTables) -> set:
    persons = tables.persons
    return set(persons.loc[persons["gender_concept_id"] == FEMALE_CONCEPT_ID, "person_id"])
