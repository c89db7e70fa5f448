"""
A collection of useful functions
"""
import dataclasses
import hashlib
import logging
import os
from pathlib import Path
from typing import Any, Callable, Iterable, List, Optional, Sequence, Tuple, Type, TypeVar

import numpy as np
import yaml

T = TypeVar("T")

"""
Field separator of sequence files. Tokens inside a field are separated by a single space.
"""
SEQUENCE_FIELD_SEPARATOR = "\t"
TOKEN_SEPARATOR = " "


def resolve_option(value, env_name: str, default=None, cast: Callable[[Any], T] = str) -> Optional[T]:
    """
    Resolves a process-level option. A value supplied directly always wins, the environment variable is used as
    fallback for a missing value, and the default is used when neither is set.

    :param value: the value supplied by the caller, None if missing
    :param env_name: the name of the fallback environment variable
    :param default: the value used when nothing else is set
    :param cast: a function converting the raw value to the expected type
    :return: the resolved value
    """
    if value is not None:
        return cast(value)
    env_value = os.getenv(env_name)
    if env_value is not None and env_value != "":
        try:
            return cast(env_value)
        except ValueError:
            raise ValueError(f"Environment variable {env_name} has an invalid value [{env_value}].")
    return default if default is None else cast(default)


def derive_seed(seed: int, *indices: int) -> int:
    """
    Derives an independent 32 bit seed from a base seed and a list of stream indices.
    The same (seed, indices) always produce the same stream, whatever the thread that consumes it.
    """
    state = np.random.SeedSequence(int(seed), spawn_key=tuple(int(i) for i in indices)).generate_state(1)
    return int(state[0])


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def atomic_write(path, write_fn: Callable[[Path], None]):
    """
    Writes a file through a temporary sibling and renames it into place, so readers never see a partial file.

    :param path: the destination path
    :param write_fn: a function writing the complete content to the path it receives
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_name(f".{path.name}.tmp")
    try:
        write_fn(tmp_path)
        os.replace(tmp_path, path)
    finally:
        if tmp_path.exists():
            tmp_path.unlink()


def atomic_write_text(path, text: str):
    atomic_write(path, lambda p: p.write_text(text, encoding="utf-8"))


def config_from_dict(cls: Type[T], values: dict) -> T:
    """
    Builds a dataclass config from a plain mapping. Unknown keys are rejected so that typos in config files
    surface as validation errors instead of silently falling back to defaults.
    """
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ValueError(f"Configuration for {cls.__name__} must be a key-value mapping.")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ValueError(f"Unknown configuration field [{unknown[0]}] for {cls.__name__}.")
    return cls(**values)


def load_yaml(path) -> Any:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Configuration file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return yaml.safe_load(fh)


def load_config(cls: Type[T], path) -> T:
    """
    Loads a dataclass config from a YAML key-value file.

    :param cls: the dataclass type
    :param path: the YAML file path
    :return: the config object
    """
    logging.debug("Loading %s from path=%s", cls.__name__, path)
    return config_from_dict(cls, load_yaml(path))


def plain_values(value):
    """
    Converts a config value to plain YAML types: sets become sorted lists, tuples become lists.
    """
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        value = dataclasses.asdict(value)
    if isinstance(value, dict):
        return {str(k): plain_values(v) for k, v in value.items()}
    if isinstance(value, (set, frozenset)):
        return sorted(plain_values(v) for v in value)
    if isinstance(value, (list, tuple)):
        return [plain_values(v) for v in value]
    return value


def dump_config(config) -> str:
    return yaml.safe_dump(plain_values(config), sort_keys=True)


def _check_field(value: str, separator: str):
    if separator in value:
        raise ValueError(f"Value [{value}] cannot contain the field separator [{separator!r}].")


def pack_sequence_line(person_id: str, tokens: Sequence[str], long_term_intervals: Iterable[int] = ()) -> str:
    """
    Packs one patient sequence into a single line of a sequence file:
    "person_id<TAB>tok1 tok2 ...<TAB>lt1,lt2".

    :param person_id: the person identifier
    :param tokens: the token surface forms
    :param long_term_intervals: the true day counts behind each [LT] token, in order
    :return: the packed line, without trailing newline
    """
    _check_field(str(person_id), SEQUENCE_FIELD_SEPARATOR)
    for token in tokens:
        if TOKEN_SEPARATOR in token or SEQUENCE_FIELD_SEPARATOR in token or len(token) == 0:
            raise ValueError(f"Token [{token}] cannot be empty or contain separators.")
    fields = [str(person_id), TOKEN_SEPARATOR.join(tokens), ",".join(str(int(i)) for i in long_term_intervals)]
    return SEQUENCE_FIELD_SEPARATOR.join(fields)


def unpack_sequence_line(line: str) -> Tuple[str, List[str], List[int]]:
    """
    Unpacks a sequence file line.
    :return:    a tuple with three values: person id, token list and [LT] intervals:
                "p1<TAB>year:1995 age:45<TAB>" -> returns -> ("p1", ["year:1995", "age:45"], [])
    """
    fields = line.rstrip("\n").split(SEQUENCE_FIELD_SEPARATOR)
    if len(fields) < 2:
        raise ValueError("Could not unpack sequence line! Not enough fields!")
    person_id, token_field = fields[0], fields[1]
    if len(person_id) == 0:
        raise ValueError("Could not unpack sequence line! Person id is empty!")
    tokens = token_field.split(TOKEN_SEPARATOR) if token_field else []
    intervals = []
    if len(fields) > 2 and fields[2]:
        intervals = [int(v) for v in fields[2].split(",")]
    return person_id, tokens, intervals
