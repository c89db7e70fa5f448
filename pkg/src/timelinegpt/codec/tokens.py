"""
Token surface forms, token classes and the artificial time token (ATT) arithmetic shared by every module.
"""
import re
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Optional, Tuple

MAX_ATT_DAYS = 1080
DAYS_PER_YEAR = 365
DAYS_PER_MONTH = 30

PAD = "[PAD]"
VS = "[VS]"
VE = "[VE]"
LT = "[LT]"
END = "[END]"

SPECIAL_TOKENS = (PAD, VS, VE, LT, END)

DOMAIN_PREFIXES = {
    "condition": "C",
    "drug": "R",
    "procedure": "P",
}
PREFIX_DOMAINS = {prefix: domain for domain, prefix in DOMAIN_PREFIXES.items()}

# tie-breaking order of events recorded on the same day
DOMAIN_RANK = {"condition": 0, "drug": 1, "procedure": 2}


class TokenClass(str, Enum):
    YEAR = "YEAR"
    AGE = "AGE"
    GENDER = "GENDER"
    RACE = "RACE"
    VS = "VS"
    VE = "VE"
    VT = "VT"
    DISCHARGE = "DISCHARGE"
    ATT_DAY = "ATT_DAY"
    ATT_LT = "ATT_LT"
    ATT_INTRA = "ATT_INTRA"
    CONCEPT = "CONCEPT"
    END = "END"
    PAD = "PAD"


INTER_VISIT_CLASSES = (TokenClass.ATT_DAY, TokenClass.ATT_LT)
TIME_CLASSES = (TokenClass.ATT_DAY, TokenClass.ATT_LT, TokenClass.ATT_INTRA)

_FIXED = {
    PAD: TokenClass.PAD,
    VS: TokenClass.VS,
    VE: TokenClass.VE,
    LT: TokenClass.ATT_LT,
    END: TokenClass.END,
}
_PATTERNS = (
    (re.compile(r"^D(0|[1-9]\d*)$"), TokenClass.ATT_DAY),
    (re.compile(r"^i-D([1-9]\d*)$"), TokenClass.ATT_INTRA),
    (re.compile(r"^year:(-?\d+)$"), TokenClass.YEAR),
    (re.compile(r"^age:(-?\d+)$"), TokenClass.AGE),
    (re.compile(r"^gender:(-?\d+)$"), TokenClass.GENDER),
    (re.compile(r"^race:(-?\d+)$"), TokenClass.RACE),
    (re.compile(r"^VT:(-?\d+)$"), TokenClass.VT),
    (re.compile(r"^DIS:(-?\d+)$"), TokenClass.DISCHARGE),
    (re.compile(r"^[CRP]:([1-9]\d*)$"), TokenClass.CONCEPT),
)


@dataclass(frozen=True)
class TimeTriple:
    years: int
    months: int
    days: int

    def recompose(self) -> int:
        return DAYS_PER_YEAR * self.years + DAYS_PER_MONTH * self.months + self.days


@lru_cache(maxsize=65536)
def _classify(text: str) -> Tuple[TokenClass, Optional[int]]:
    if text in _FIXED:
        return _FIXED[text], None
    for pattern, token_class in _PATTERNS:
        match = pattern.match(text)
        if match:
            value = int(match.group(1))
            if token_class == TokenClass.ATT_DAY and value > MAX_ATT_DAYS:
                break
            return token_class, value
    raise ValueError(f"Unknown token [{text}].")


def token_class(text: str) -> TokenClass:
    """
    Returns the class of a token. The class is a function of the surface form only.

    :param text: the token surface form
    :return: the TokenClass, a ValueError is raised for unknown forms
    """
    return _classify(text)[0]


def token_value(text: str) -> Optional[int]:
    """
    Returns the integer carried by a token: days for time tokens, the code for concept-like tokens, None for
    structural tokens and [LT].
    """
    return _classify(text)[1]


def att_token(interval_days: int) -> str:
    """
    Returns the inter-visit time token for a gap in days: D0..D1080, or [LT] for longer gaps.

    :param interval_days: the gap in days, a negative gap means the visits are out of order
    :return: the token surface form
    """
    if interval_days < 0:
        raise ValueError(f"Negative visit interval [{interval_days}] days, visits are not in chronological order.")
    if interval_days > MAX_ATT_DAYS:
        return LT
    return f"D{int(interval_days)}"


def intra_att_token(interval_days: int) -> str:
    if interval_days < 1:
        raise ValueError(f"Intra-visit interval must be at least one day, got [{interval_days}].")
    return f"i-D{int(interval_days)}"


def decompose_interval(interval_days: int) -> TimeTriple:
    """
    Splits a day count into years of 365 days, months of 30 days and remaining days.
    For example 396 days are 1 year, 1 month and 1 day.
    """
    remainder = interval_days % DAYS_PER_YEAR
    return TimeTriple(
        years=interval_days // DAYS_PER_YEAR,
        months=remainder // DAYS_PER_MONTH,
        days=remainder % DAYS_PER_MONTH,
    )


def concept_token(domain: str, concept_id: int) -> str:
    prefix = DOMAIN_PREFIXES.get(domain)
    if prefix is None:
        raise ValueError(f"Unsupported event domain [{domain}].")
    if concept_id == 0:
        raise ValueError("Unknown concepts (concept_id = 0) cannot be encoded.")
    return f"{prefix}:{int(concept_id)}"


def concept_domain(text: str) -> str:
    if token_class(text) != TokenClass.CONCEPT:
        raise ValueError(f"Token [{text}] is not a concept token.")
    return PREFIX_DOMAINS[text[0]]


def visit_type_token(visit_concept_id: int) -> str:
    return f"VT:{int(visit_concept_id)}"


def discharge_token(discharge_concept_id: int) -> str:
    return f"DIS:{int(discharge_concept_id)}"
