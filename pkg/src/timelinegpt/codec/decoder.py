import logging
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Dict, List, Optional, Sequence

from timelinegpt.codec.records import ClinicalEvent, CodecConfig, PatientRecord, Visit
from timelinegpt.codec.sequence import TokenSequence
from timelinegpt.codec.tokens import TokenClass, concept_domain, token_class, token_value

PREFIX_CLASSES = (TokenClass.YEAR, TokenClass.AGE, TokenClass.GENDER, TokenClass.RACE)


class DecodeError(ValueError):
    """
    A token sequence that does not follow the timeline grammar. `position` is the index of the first offending
    token and `reason` a short machine readable code.
    """

    def __init__(self, position: int, reason: str, detail: str = ""):
        self.position = position
        self.reason = reason
        message = f"Cannot decode sequence at position {position}: {reason}"
        super().__init__(f"{message} ({detail})" if detail else message)


@dataclass
class _OpenVisit:
    visit_concept_id: int
    inpatient: bool
    start_date: date
    current_date: date
    discharge_concept_id: Optional[int] = None
    events: List[ClinicalEvent] = field(default_factory=list)

    def close(self) -> Visit:
        return Visit(self.visit_concept_id, self.start_date, self.current_date, self.discharge_concept_id,
                     tuple(self.events))


def _class_at(tokens: Sequence[str], position: int) -> TokenClass:
    try:
        return token_class(tokens[position])
    except ValueError:
        raise DecodeError(position, "unknown_token", tokens[position])


def decode_sequence(seq: TokenSequence, cfg: CodecConfig = None, anchor: date = None,
                    person_id: str = None) -> PatientRecord:
    """
    Rebuilds a PatientRecord from a token sequence. Visit dates are accumulated from the anchor through the time
    tokens; [LT] positions use the interval stored in the sequence.

    :param seq: the token sequence
    :param cfg: optional: the codec options, they decide which visit types are inpatient
    :param anchor: optional: the start date of the first visit, January 1st of the year token by default
    :param person_id: optional: the id of the decoded person, the sequence's own id by default
    :return: the PatientRecord, a DecodeError is raised on the first grammar violation
    """
    cfg = cfg or CodecConfig()
    tokens = seq.tokens
    for position, expected in enumerate(PREFIX_CLASSES[:len(tokens)]):
        if _class_at(tokens, position) != expected:
            raise DecodeError(position, "missing_prefix", tokens[position])
    if len(tokens) < len(PREFIX_CLASSES):
        raise DecodeError(len(tokens), "missing_prefix")
    year, age, gender, race = (token_value(t) for t in tokens[:4])
    if anchor is None:
        if not 1 <= year <= 9999:
            raise DecodeError(0, "missing_prefix", f"year {year} out of range")
        anchor = date(year, 1, 1)

    visits: List[Visit] = []
    open_visit: Optional[_OpenVisit] = None
    next_start = anchor
    pending_gap = False
    position = len(PREFIX_CLASSES)
    try:
        while position < len(tokens):
            cls = _class_at(tokens, position)
            token = tokens[position]
            if open_visit is None:
                if cls == TokenClass.VS:
                    if position + 1 >= len(tokens) or _class_at(tokens, position + 1) != TokenClass.VT:
                        raise DecodeError(position + 1, "missing_visit_type")
                    visit_concept = token_value(tokens[position + 1])
                    open_visit = _OpenVisit(visit_concept, cfg.is_inpatient(visit_concept), next_start, next_start)
                    pending_gap = False
                    position += 2
                    continue
                if cls in (TokenClass.ATT_DAY, TokenClass.ATT_LT):
                    if not visits or pending_gap:
                        raise DecodeError(position, "token_outside_visit", token)
                    next_start = next_start + timedelta(days=int(seq.intervals[position] if cls == TokenClass.ATT_LT
                                                                  else token_value(token)))
                    pending_gap = True
                elif cls == TokenClass.END:
                    if not visits:
                        raise DecodeError(position, "empty_sequence")
                    if position != len(tokens) - 1:
                        raise DecodeError(position + 1, "trailing_tokens")
                    return PatientRecord(person_id if person_id is not None else seq.person_id,
                                         year - age, gender, race, tuple(visits))
                elif cls == TokenClass.VE:
                    raise DecodeError(position, "unbalanced_visit")
                else:
                    raise DecodeError(position, "token_outside_visit", token)
            else:
                if cls == TokenClass.CONCEPT:
                    if open_visit.discharge_concept_id is not None:
                        raise DecodeError(position, "event_after_discharge", token)
                    open_visit.events.append(ClinicalEvent(token_value(token), concept_domain(token),
                                                           open_visit.current_date))
                elif cls == TokenClass.ATT_INTRA:
                    if open_visit.discharge_concept_id is not None:
                        raise DecodeError(position, "event_after_discharge", token)
                    open_visit.current_date += timedelta(days=token_value(token))
                elif cls == TokenClass.DISCHARGE:
                    if not open_visit.inpatient or open_visit.discharge_concept_id is not None:
                        raise DecodeError(position, "unexpected_discharge", token)
                    open_visit.discharge_concept_id = token_value(token)
                elif cls == TokenClass.VE:
                    if open_visit.inpatient and open_visit.discharge_concept_id is None:
                        raise DecodeError(position, "missing_discharge")
                    visit = open_visit.close()
                    visits.append(visit)
                    next_start = visit.end_date
                    open_visit = None
                elif cls in (TokenClass.ATT_DAY, TokenClass.ATT_LT):
                    raise DecodeError(position, "att_inside_visit", token)
                elif cls == TokenClass.VS:
                    raise DecodeError(position, "unbalanced_visit")
                elif cls == TokenClass.END:
                    raise DecodeError(position, "unterminated_visit")
                else:
                    raise DecodeError(position, "unexpected_token", token)
            position += 1
    except OverflowError:
        raise DecodeError(position, "date_overflow")

    if open_visit is not None:
        raise DecodeError(len(tokens), "unterminated_visit")
    raise DecodeError(len(tokens), "missing_end")


def validate_sequence(tokens: Sequence[str], cfg: CodecConfig = None):
    """
    Checks a token list against the timeline grammar, raising a DecodeError on the first violation.
    """
    decode_sequence(TokenSequence.from_tokens(tokens), cfg, anchor=date(2000, 1, 1))


@dataclass
class DecodeReport:
    records: List[PatientRecord]
    failures: Dict[str, int]
    n_sequences: int

    @property
    def n_failed(self) -> int:
        return sum(self.failures.values())

    @property
    def success_rate(self) -> float:
        return len(self.records) / self.n_sequences if self.n_sequences else 0.0


def decode_sequences(sequences: Sequence[TokenSequence], cfg: CodecConfig = None) -> DecodeReport:
    """
    Decodes a batch of sequences, counting failures by reason instead of dropping them silently.
    """
    records, failures = [], Counter()
    for seq in sequences:
        try:
            records.append(decode_sequence(seq, cfg))
        except DecodeError as e:
            failures[e.reason] += 1
    report = DecodeReport(records=records, failures=dict(failures), n_sequences=len(sequences))
    logging.info("Decoded sequences total=%d decoded=%d failed=%d", report.n_sequences, len(records), report.n_failed)
    for reason, count in sorted(failures.items()):
        logging.debug("Decode failures reason=%s count=%d", reason, count)
    return report
