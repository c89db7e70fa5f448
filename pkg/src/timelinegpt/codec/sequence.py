import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

from timelinegpt.codec.tokens import LT, TIME_CLASSES, TokenClass, token_class, token_value
from timelinegpt.util import atomic_write_text, pack_sequence_line, unpack_sequence_line


@dataclass(frozen=True)
class TokenSequence:
    """
    An encoded patient timeline. `intervals` holds, for each position, the day count behind a time token and
    None elsewhere; for [LT] positions it is the true gap when known.
    """
    person_id: str
    tokens: Tuple[str, ...]
    intervals: Tuple[Optional[int], ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "intervals", tuple(self.intervals))
        if len(self.tokens) != len(self.intervals):
            raise ValueError("Token and interval lists must have the same length.")

    def __len__(self):
        return len(self.tokens)

    @classmethod
    def from_tokens(cls, tokens: Iterable[str], person_id: str = "", long_term_intervals: Iterable[int] = (),
                    long_term_days: int = 1081) -> "TokenSequence":
        """
        Builds a sequence from surface tokens, reading day counts off the time tokens. [LT] positions take their
        values from `long_term_intervals` in order, then fall back to `long_term_days`.
        """
        tokens = list(tokens)
        lt_values = list(long_term_intervals)
        intervals = []
        for token in tokens:
            try:
                cls_ = token_class(token)
            except ValueError:
                # left for the decoder to report with its position
                cls_ = None
            if cls_ == TokenClass.ATT_LT:
                intervals.append(lt_values.pop(0) if lt_values else long_term_days)
            elif cls_ in TIME_CLASSES:
                intervals.append(token_value(token))
            else:
                intervals.append(None)
        return cls(person_id=str(person_id), tokens=tuple(tokens), intervals=tuple(intervals))

    def long_term_intervals(self) -> List[int]:
        return [i for t, i in zip(self.tokens, self.intervals) if t == LT]

    def truncate(self, max_tokens: int) -> "TokenSequence":
        if len(self) <= max_tokens:
            return self
        return TokenSequence(self.person_id, self.tokens[:max_tokens], self.intervals[:max_tokens])

    def to_line(self) -> str:
        return pack_sequence_line(self.person_id, self.tokens, self.long_term_intervals())

    @classmethod
    def from_line(cls, line: str, long_term_days: int = 1081) -> "TokenSequence":
        person_id, tokens, lt_values = unpack_sequence_line(line)
        return cls.from_tokens(tokens, person_id, lt_values, long_term_days)


def write_sequences(sequences: Iterable[TokenSequence], path):
    lines = [s.to_line() for s in sequences]
    atomic_write_text(path, "".join(line + "\n" for line in lines))
    logging.info("Wrote sequences count=%d path=%s", len(lines), path)


def read_sequences(path, long_term_days: int = 1081) -> List[TokenSequence]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Sequence file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        sequences = [TokenSequence.from_line(line, long_term_days) for line in fh if line.strip()]
    logging.debug("Read sequences count=%d path=%s", len(sequences), path)
    return sequences
