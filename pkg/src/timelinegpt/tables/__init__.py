from timelinegpt.tables.base import EventTables, read_tables, write_tables, register_table, get_table
from timelinegpt.tables import persons, visits, events, ancestry
