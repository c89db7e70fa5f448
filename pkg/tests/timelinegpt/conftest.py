import os
from datetime import date, timedelta

import numpy as np
import pytest
import torch

from timelinegpt.codec import ClinicalEvent, CodecConfig, PatientRecord, Visit, build_vocabulary, encode_patient

INPATIENT_TYPES = (9201, 262)
OUTPATIENT_TYPES = (9202, 581477)
DISCHARGE_TYPES = (8536, 8863)
DOMAINS = ("condition", "drug", "procedure")


def pytest_collection_modifyitems(config, items):
    if os.getenv("TIMELINEGPT_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set TIMELINEGPT_RUN_SLOW=1 to run long acceptance experiments")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def _random_events(rng, first_day: date, n_days: int, n_events: int, n_concepts: int):
    events = []
    for _ in range(n_events):
        events.append(ClinicalEvent(
            concept_id=int(rng.integers(1, n_concepts + 1)),
            domain=DOMAINS[int(rng.integers(0, 3))],
            date=first_day + timedelta(days=int(rng.integers(0, n_days + 1))),
        ))
    return tuple(events)


def random_record(rng: np.random.Generator, person_id: str, max_visits: int = 6, max_gap: int = 1080,
                  n_concepts: int = 50, inpatient_rate: float = 0.3) -> PatientRecord:
    current = date(1990, 1, 1) + timedelta(days=int(rng.integers(0, 3000)))
    visits = []
    for _ in range(int(rng.integers(1, max_visits + 1))):
        if rng.random() < inpatient_rate:
            duration = int(rng.integers(0, 11))
            visit = Visit(
                visit_concept_id=INPATIENT_TYPES[int(rng.integers(0, 2))],
                start_date=current,
                end_date=current + timedelta(days=duration),
                discharge_concept_id=DISCHARGE_TYPES[int(rng.integers(0, 2))],
                events=_random_events(rng, current, duration, int(rng.integers(0, 6)), n_concepts),
            )
        else:
            duration = int(rng.integers(0, 3)) if rng.random() < 0.2 else 0
            visit = Visit(
                visit_concept_id=OUTPATIENT_TYPES[int(rng.integers(0, 2))],
                start_date=current,
                end_date=current + timedelta(days=duration),
                events=_random_events(rng, current, duration, int(rng.integers(0, 5)), n_concepts),
            )
        visits.append(visit)
        current = visit.end_date + timedelta(days=int(rng.integers(0, max_gap + 1)))
    return PatientRecord(
        person_id=person_id,
        birth_year=int(rng.integers(1920, 1990)),
        gender_concept=(8507, 8532)[int(rng.integers(0, 2))],
        race_concept=(8527, 8516)[int(rng.integers(0, 2))],
        visits=tuple(visits),
    )


@pytest.fixture
def record_factory():
    """A function building random, valid patient records from a numpy Generator."""
    return random_record


@pytest.fixture
def codec_config():
    return CodecConfig()


@pytest.fixture
def outpatient_record():
    return PatientRecord(
        person_id="p1",
        birth_year=1950,
        gender_concept=8532,
        race_concept=8527,
        visits=(Visit(9202, date(1995, 3, 1), date(1995, 3, 1),
                      events=(ClinicalEvent(320128, "condition", date(1995, 3, 1)),)),),
    )


class MarkovModel:
    """
    A stand-in for a trained model whose next-token logits depend only on the last token.
    `table` is a [vocab, vocab] tensor of logits, row i holding the logits after token i.
    """

    def __init__(self, table):
        self.table = torch.as_tensor(table, dtype=torch.float64)
        self.calls = 0

    def eval(self):
        return self

    def next_token_logits(self, token_ids):
        self.calls += 1
        return self.table[int(token_ids[-1])].clone()


@pytest.fixture
def markov_model():
    """Builds a MarkovModel from a logit table."""
    return MarkovModel


@pytest.fixture
def demographic_vocab(outpatient_record):
    """A vocabulary and the encoded sequence of the single outpatient record."""
    seq = encode_patient(outpatient_record)
    return build_vocabulary([seq]), seq
