import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional

import pandas as pd

from timelinegpt.util import resolve_option

DEFAULT_DATA_DIR = "data"

DATE_FORMAT = "%Y-%m-%d"

TABLE_CLASSES = {}


class Table:
    """
    Base class of the flat event tables. Subclasses declare their columns with the pandas dtype each one is
    coerced to. Date columns use the "date" marker and are parsed as ISO-8601 days.
    """
    __table_name__: str = None
    columns: Dict[str, str] = {}
    optional: bool = False

    @classmethod
    def filename(cls) -> str:
        return f"{cls.__table_name__}.csv"

    @classmethod
    def empty(cls) -> pd.DataFrame:
        return cls.validate(pd.DataFrame({name: [] for name in cls.columns}))

    @classmethod
    def validate(cls, frame: pd.DataFrame) -> pd.DataFrame:
        """
        Checks the frame has every declared column and coerces column types.

        :param frame: the raw table
        :return: a new frame restricted to the declared columns, in declared order
        """
        missing = [c for c in cls.columns if c not in frame.columns]
        if missing:
            raise ValueError(f"Table [{cls.__table_name__}] is missing column [{missing[0]}].")
        out = frame[list(cls.columns)].copy()
        for name, dtype in cls.columns.items():
            if dtype == "date":
                if not pd.api.types.is_datetime64_any_dtype(out[name]):
                    out[name] = pd.to_datetime(out[name].astype(str), format=DATE_FORMAT)
            elif dtype == "str":
                out[name] = out[name].astype(str)
            else:
                out[name] = pd.to_numeric(out[name]).astype(dtype)
        return out.reset_index(drop=True)

    @classmethod
    def read(cls, path) -> pd.DataFrame:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"Table [{cls.__table_name__}] file not found: {path}")
        logging.debug("Reading table name=%s path=%s", cls.__table_name__, path)
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[""], encoding="utf-8")
        return cls.validate(frame)

    @classmethod
    def write(cls, frame: pd.DataFrame, path):
        out = frame[list(cls.columns)].copy()
        for name, dtype in cls.columns.items():
            if dtype == "date":
                out[name] = out[name].dt.strftime(DATE_FORMAT)
        out.to_csv(path, index=False, encoding="utf-8")


def register_table(name):
    def wrapper(cls):
        cls.__table_name__ = name
        TABLE_CLASSES[name] = cls
        return cls

    return wrapper


def get_table(name):
    cls = TABLE_CLASSES.get(name)
    if cls is None:
        raise RuntimeError(f"Table [{name}] was not registered.")
    return cls


@dataclass
class EventTables:
    """
    The flat relational form of a patient population: persons, visits, events and, optionally, the concept
    ancestry used to expand outcome definitions.
    """
    persons: pd.DataFrame
    visits: pd.DataFrame
    events: pd.DataFrame
    ancestry: Optional[pd.DataFrame] = None

    def __post_init__(self):
        self.persons = get_table("persons").validate(self.persons)
        self.visits = get_table("visits").validate(self.visits)
        self.events = get_table("events").validate(self.events)
        if self.ancestry is not None:
            self.ancestry = get_table("ancestry").validate(self.ancestry)

    @property
    def n_persons(self) -> int:
        return len(self.persons)


def read_tables(data_dir=None, persons=None, visits=None, events=None, ancestry=None) -> EventTables:
    """
    Reads the event tables from delimited text files.
    Each file path can be supplied directly; a missing path falls back to the file of the same name inside the
    data directory. The data directory itself can be set with the "TIMELINEGPT_DATA_DIR" environment variable
    and defaults to "data".

    :param data_dir: optional: the directory holding persons.csv, visits.csv, events.csv and ancestry.csv
    :param persons: optional: the persons file path
    :param visits: optional: the visits file path
    :param events: optional: the events file path
    :param ancestry: optional: the ancestry file path. The ancestry table is only loaded when the file exists
    :return: the loaded EventTables
    """
    p_data_dir = Path(resolve_option(data_dir, "TIMELINEGPT_DATA_DIR", DEFAULT_DATA_DIR))

    def path_of(name, explicit):
        return Path(explicit) if explicit else p_data_dir / get_table(name).filename()

    ancestry_path = path_of("ancestry", ancestry)
    tables = EventTables(
        persons=get_table("persons").read(path_of("persons", persons)),
        visits=get_table("visits").read(path_of("visits", visits)),
        events=get_table("events").read(path_of("events", events)),
        ancestry=get_table("ancestry").read(ancestry_path) if ancestry_path.is_file() else None,
    )
    logging.info("Loaded event tables persons=%d visits=%d events=%d",
                 len(tables.persons), len(tables.visits), len(tables.events))
    return tables


def write_tables(tables: EventTables, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    get_table("persons").write(tables.persons, out_dir / get_table("persons").filename())
    get_table("visits").write(tables.visits, out_dir / get_table("visits").filename())
    get_table("events").write(tables.events, out_dir / get_table("events").filename())
    if tables.ancestry is not None:
        get_table("ancestry").write(tables.ancestry, out_dir / get_table("ancestry").filename())
    logging.info("Wrote event tables dir=%s persons=%d", out_dir, len(tables.persons))
