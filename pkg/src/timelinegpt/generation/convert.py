import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Tuple, Union

import numpy as np
import pandas as pd

from timelinegpt.codec import (CodecConfig, DecodeError, TokenSequence, decode_sequence, encode_patients,
                               records_from_tables, tables_from_records)
from timelinegpt.codec.tokens import END, VE
from timelinegpt.generation.sampler import SampledSequence
from timelinegpt.tables import EventTables
from timelinegpt.tables.persons import FEMALE_CONCEPT_ID
from timelinegpt.tables.visits import visit_counts
from timelinegpt.util import atomic_write


@dataclass
class ConversionReport:
    attempted: int = 0
    succeeded: int = 0
    repaired: int = 0
    failures: Dict[str, int] = field(default_factory=dict)

    def fractions(self) -> Dict[str, float]:
        """
        The share of successes and of every failure reason. The values sum to 1.
        """
        if self.attempted == 0:
            return {}
        out = {"succeeded": self.succeeded / self.attempted}
        for reason, count in sorted(self.failures.items()):
            out[f"failed:{reason}"] = count / self.attempted
        return out

    def to_frame(self) -> pd.DataFrame:
        rows = [("attempted", self.attempted, 1.0 if self.attempted else 0.0),
                ("repaired", self.repaired, self.repaired / self.attempted if self.attempted else 0.0)]
        counts = {"succeeded": self.succeeded, **{f"failed:{r}": c for r, c in self.failures.items()}}
        rows += [(name, counts[name], fraction) for name, fraction in self.fractions().items()]
        return pd.DataFrame(rows, columns=["outcome", "count", "fraction"])

    def write(self, path):
        atomic_write(path, lambda p: self.to_frame().to_csv(p, index=False))


def repair_truncated(tokens: Tuple[str, ...]) -> Tuple[str, ...]:
    """
    Ends a sequence cut by max_tokens after its last complete visit block. Sequences without a complete block
    are returned unchanged.
    """
    if VE not in tokens:
        return tokens
    last = len(tokens) - 1 - tokens[::-1].index(VE)
    return tuple(tokens[:last + 1]) + (END,)


def convert_to_tables(corpus: Iterable[Union[SampledSequence, TokenSequence]], cfg: CodecConfig = None,
                      id_prefix: str = "synthetic-") -> Tuple[EventTables, ConversionReport]:
    """
    Decodes generated sequences into event tables. Sequences that hit max_tokens are cut after their last complete
    visit. Decoded persons get fresh sequential ids; sequences that fail to decode are counted by reason.

    :param corpus: sampled sequences, or plain token sequences
    :param cfg: optional: the codec options
    :param id_prefix: the prefix of the synthetic person ids
    :return: the EventTables and the ConversionReport
    """
    cfg = cfg or CodecConfig()
    report = ConversionReport()
    failures = Counter()
    records = []
    for item in corpus:
        report.attempted += 1
        seq, truncated = (item.sequence, item.hit_max_tokens) if isinstance(item, SampledSequence) else (item, False)
        if truncated:
            tokens = repair_truncated(seq.tokens)
            if tokens != seq.tokens:
                report.repaired += 1
            seq = TokenSequence.from_tokens(tokens, seq.person_id, seq.long_term_intervals(), cfg.long_term_days)
        try:
            records.append(decode_sequence(seq, cfg, person_id=f"{id_prefix}{len(records)}"))
        except DecodeError as e:
            failures[e.reason] += 1
    report.succeeded = len(records)
    report.failures = dict(failures)
    logging.info("Converted sequences attempted=%d succeeded=%d repaired=%d", report.attempted, report.succeeded,
                 report.repaired)
    return tables_from_records(records), report


@dataclass
class SummaryStats:
    n_persons: int
    median_age: float
    pct_female: float
    visits_q1: float
    visits_median: float
    visits_q3: float
    tokens_q1: float
    tokens_median: float
    tokens_q3: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(list(self.__dict__.items()), columns=["statistic", "value"])


def summary_stats(tables: EventTables, cfg: CodecConfig = None) -> SummaryStats:
    """
    Demographic and utilization summary of a population: median age at first visit, percentage of women,
    quartiles of the visit count and of the encoded sequence length per person.
    """
    if tables.n_persons == 0:
        raise ValueError("Cannot summarize an empty population.")
    persons = tables.persons.set_index("person_id")
    first_visit = tables.visits.groupby("person_id")["start_date"].min()
    ages = (first_visit.dt.year - persons.loc[first_visit.index, "birth_year"]).to_numpy()
    visits = visit_counts(tables).to_numpy()
    lengths = np.array([len(s) for s in encode_patients(records_from_tables(tables), cfg)])
    visit_quartiles = np.percentile(visits, [25, 50, 75])
    token_quartiles = np.percentile(lengths, [25, 50, 75]) if len(lengths) else np.full(3, np.nan)
    return SummaryStats(
        n_persons=tables.n_persons,
        median_age=float(np.median(ages)) if len(ages) else float("nan"),
        pct_female=100.0 * float((persons["gender_concept_id"] == FEMALE_CONCEPT_ID).mean()),
        visits_q1=float(visit_quartiles[0]),
        visits_median=float(visit_quartiles[1]),
        visits_q3=float(visit_quartiles[2]),
        tokens_q1=float(token_quartiles[0]),
        tokens_median=float(token_quartiles[1]),
        tokens_q3=float(token_quartiles[2]),
    )
