import logging
from typing import Iterable, List, Optional

from timelinegpt.codec.records import CodecConfig, PatientRecord, Visit
from timelinegpt.codec.sequence import TokenSequence
from timelinegpt.codec.tokens import (END, LT, VE, VS, att_token, concept_token, discharge_token,
                                      intra_att_token, visit_type_token)


def _check_visit(visit: Visit, cfg: CodecConfig):
    inpatient = cfg.is_inpatient(visit.visit_concept_id)
    if inpatient and visit.discharge_concept_id is None:
        raise ValueError(f"Inpatient visit starting {visit.start_date} has no discharge concept.")
    if not inpatient and visit.discharge_concept_id is not None:
        raise ValueError(f"Visit of type [{visit.visit_concept_id}] starting {visit.start_date} "
                         f"is not inpatient but has a discharge concept.")
    for event in visit.events:
        if event.date < visit.start_date or event.date > visit.end_date:
            raise ValueError(f"Event [{event.concept_id}] dated {event.date} falls outside its visit "
                             f"[{visit.start_date}, {visit.end_date}].")


def _encode_visit(visit: Visit, cfg: CodecConfig, tokens: List[str], intervals: List[Optional[int]]):
    inpatient = cfg.is_inpatient(visit.visit_concept_id)
    tokens += [VS, visit_type_token(visit.visit_concept_id)]
    intervals += [None, None]
    current = visit.start_date
    for event in visit.events:
        if cfg.intra_visit_time and event.date > current:
            gap = (event.date - current).days
            tokens.append(intra_att_token(gap))
            intervals.append(gap)
            current = event.date
        tokens.append(concept_token(event.domain, event.concept_id))
        intervals.append(None)
    if cfg.intra_visit_time and visit.end_date > current:
        gap = (visit.end_date - current).days
        tokens.append(intra_att_token(gap))
        intervals.append(gap)
    if inpatient:
        tokens.append(discharge_token(visit.discharge_concept_id))
        intervals.append(None)
    tokens.append(VE)
    intervals.append(None)


def encode_patient(record: PatientRecord, cfg: CodecConfig = None) -> TokenSequence:
    """
    Encodes a patient as a token sequence:
    "year:Y age:A gender:G race:R [VS] VT:v events... [DIS:d] [VE] D{n} [VS] ... [VE] [END]".
    Inpatient visits carry their discharge token. A visit spanning several days carries, when enabled, "i-D{n}"
    tokens between events recorded on different days and up to its end day. Inter-visit gaps run from the end of
    one visit to the start of the next.

    :param record: the patient record, with at least one visit
    :param cfg: optional: the codec options
    :return: the TokenSequence, with the true gap recorded at every time token position
    """
    cfg = cfg or CodecConfig()
    if not record.visits:
        raise ValueError(f"Person [{record.person_id}] has no visit to encode.")

    first = record.visits[0].start_date
    tokens = [f"year:{first.year}", f"age:{first.year - record.birth_year}",
              f"gender:{record.gender_concept}", f"race:{record.race_concept}"]
    intervals: List[Optional[int]] = [None] * 4

    previous = None
    for visit in record.visits:
        _check_visit(visit, cfg)
        if previous is not None:
            if visit.start_date < previous.start_date:
                raise ValueError(f"Visits of person [{record.person_id}] are not ordered by start date.")
            gap = max(0, (visit.start_date - previous.end_date).days)
            token = att_token(gap)
            tokens.append(token)
            intervals.append(gap)
        _encode_visit(visit, cfg, tokens, intervals)
        previous = visit

    tokens.append(END)
    intervals.append(None)
    return TokenSequence(person_id=record.person_id, tokens=tuple(tokens), intervals=tuple(intervals))


def encode_patients(records: Iterable[PatientRecord], cfg: CodecConfig = None) -> List[TokenSequence]:
    cfg = cfg or CodecConfig()
    sequences = [encode_patient(r, cfg) for r in records]
    long_term = sum(s.tokens.count(LT) for s in sequences)
    logging.info("Encoded patients count=%d long_term_gaps=%d", len(sequences), long_term)
    return sequences
