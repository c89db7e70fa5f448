"""
Privacy attacks against a synthetic population. Every person is flattened to a binary profile and the attacks
compare profiles by Hamming distance. Each attack yields a risk score; a population passes when every score stays
below PASS_THRESHOLD.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.neighbors import NearestNeighbors

from timelinegpt.codec.tokens import DOMAIN_PREFIXES, concept_token
from timelinegpt.tables import EventTables
from timelinegpt.util import atomic_write

PASS_THRESHOLD = 0.333

MIN_SAMPLE_SIZE = 10

DEMOGRAPHIC_GROUPS = ("gender", "race", "decade")


@dataclass
class PrivacyConfig:
    """
    Options of the privacy evaluation.

    sample_size: the number of profiles drawn from each population, at most the smallest population
    n_concepts: profiles hold the presence of the most prevalent concepts of the training population
    key_attributes: the column groups an attacker knows, by group name (gender, race, decade, C, R, P) or column name
    sensitive_attributes: the column groups inferred by the attribute attack, every concept column when empty
    quasi_identifiers: the column groups linking a synthetic record to a person
    match_tolerance: the share of the remaining columns that must agree for a disclosure
    seed: the seed of the subsampling streams
    """
    sample_size: int = 1000
    n_concepts: int = 100
    key_attributes: List[str] = field(default_factory=lambda: list(DEMOGRAPHIC_GROUPS))
    sensitive_attributes: List[str] = field(default_factory=list)
    quasi_identifiers: List[str] = field(default_factory=lambda: list(DEMOGRAPHIC_GROUPS))
    match_tolerance: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.sample_size < MIN_SAMPLE_SIZE:
            raise ValueError(f"PrivacyConfig field [sample_size] must be at least {MIN_SAMPLE_SIZE}.")
        if self.n_concepts <= 0:
            raise ValueError("PrivacyConfig field [n_concepts] must be positive.")
        if not 0.0 <= self.match_tolerance <= 1.0:
            raise ValueError("PrivacyConfig field [match_tolerance] must be in [0, 1].")
        if not self.quasi_identifiers:
            raise ValueError("PrivacyConfig field [quasi_identifiers] cannot be empty.")


@dataclass
class Profiles:
    person_ids: List[str]
    columns: List[str]
    matrix: np.ndarray

    def __len__(self):
        return len(self.person_ids)

    def indices(self, groups: Sequence[str]) -> List[int]:
        """
        The column indices of the given groups; a group matches the prefix before ":" or a full column name.
        """
        groups = set(groups)
        return [i for i, c in enumerate(self.columns) if c in groups or c.split(":")[0] in groups]


def _encodable(events: pd.DataFrame) -> pd.DataFrame:
    return events[events["domain"].isin(list(DOMAIN_PREFIXES)) & (events["concept_id"] != 0)]


def profile_columns(tables: EventTables, n_concepts: int = 100) -> List[str]:
    """
    The profile layout of a comparison: demographic one-hot columns, then the n_concepts concepts recorded for the
    most persons.
    """
    persons = tables.persons
    demographics = sorted({f"gender:{g}" for g in persons["gender_concept_id"]}) + \
        sorted({f"race:{r}" for r in persons["race_concept_id"]}) + \
        sorted({f"decade:{(y // 10) * 10}" for y in persons["birth_year"]})
    events = _encodable(tables.events).drop_duplicates(["person_id", "domain", "concept_id"])
    counts = events.groupby(["domain", "concept_id"]).size().reset_index(name="persons")
    counts["token"] = [concept_token(d, c) for d, c in zip(counts["domain"], counts["concept_id"])]
    counts = counts.sort_values(["persons", "token"], ascending=[False, True]).head(n_concepts)
    return demographics + list(counts["token"])


def build_profiles(tables: EventTables, columns: Sequence[str]) -> Profiles:
    """
    Flattens every person to the presence indicators of the given columns. Values outside the columns are dropped.
    """
    index = {c: i for i, c in enumerate(columns)}
    person_ids = list(tables.persons["person_id"])
    rows = {pid: r for r, pid in enumerate(person_ids)}
    matrix = np.zeros((len(person_ids), len(columns)), dtype=bool)

    def mark(person_id, token):
        column = index.get(token)
        if column is not None:
            matrix[rows[person_id], column] = True

    for p in tables.persons.itertuples(index=False):
        mark(p.person_id, f"gender:{p.gender_concept_id}")
        mark(p.person_id, f"race:{p.race_concept_id}")
        mark(p.person_id, f"decade:{(p.birth_year // 10) * 10}")
    for e in _encodable(tables.events).itertuples(index=False):
        if e.person_id in rows:
            mark(e.person_id, concept_token(e.domain, e.concept_id))
    return Profiles(person_ids, list(columns), matrix)


def _canonical(matrix: np.ndarray) -> np.ndarray:
    """Sorts profile rows so that subsampling does not depend on record order."""
    matrix = np.asarray(matrix, dtype=bool)
    if len(matrix) == 0:
        return matrix
    order = np.lexsort(matrix.T[::-1])
    return matrix[order]


def _subsample(matrix: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    matrix = _canonical(matrix)
    if len(matrix) == n:
        return matrix
    return matrix[np.sort(rng.choice(len(matrix), size=n, replace=False))]


def _nearest(queries: np.ndarray, reference: np.ndarray, n_neighbors: int = 1, threads: int = None):
    """Hamming distances, in differing columns, and indices of the nearest reference rows."""
    index = NearestNeighbors(n_neighbors=n_neighbors, metric="hamming", algorithm="brute", n_jobs=threads)
    index.fit(reference)
    distances, indices = index.kneighbors(queries)
    return np.rint(distances * reference.shape[1]).astype(int), indices


def _closer(d_other: np.ndarray, d_self: np.ndarray) -> float:
    """The share of records whose nearest neighbour in the other set is farther than in their own set, ties 0.5."""
    return float(np.mean((d_other > d_self) + 0.5 * (d_other == d_self)))


def adversarial_accuracy(a: np.ndarray, b: np.ndarray, threads: int = None) -> float:
    """
    Nearest-neighbour adversarial accuracy of two equally sized sets, with leave-self-out distances inside a set.
    """
    d_ab = _nearest(a, b, threads=threads)[0][:, 0]
    d_ba = _nearest(b, a, threads=threads)[0][:, 0]
    d_aa = _nearest(a, a, 2, threads)[0][:, 1]
    d_bb = _nearest(b, b, 2, threads)[0][:, 1]
    return 0.5 * (_closer(d_ab, d_aa) + _closer(d_ba, d_bb))


def nnaa_risk(train: np.ndarray, evaluation: np.ndarray, synthetic: np.ndarray, sample_size: int = None,
              seed: int = 0, threads: int = None) -> float:
    """
    Nearest-neighbour adversarial accuracy risk: how much closer the synthetic records sit to the training records
    than to held-out records. The three sets are subsampled to the same size.

    :param train: the training profiles
    :param evaluation: the held-out profiles
    :param synthetic: the synthetic profiles
    :param sample_size: optional: the common size, the smallest set size by default
    :param seed: the subsampling seed
    :param threads: optional: the number of nearest-neighbour jobs
    :return: AA(evaluation, synthetic) - AA(train, synthetic)
    """
    n = min(len(train), len(evaluation), len(synthetic))
    if sample_size is not None:
        n = min(n, sample_size)
    if n < MIN_SAMPLE_SIZE:
        raise ValueError(f"Adversarial accuracy needs at least {MIN_SAMPLE_SIZE} profiles per set, got {n}.")
    rng = np.random.default_rng(seed)
    train, evaluation, synthetic = (_subsample(m, n, rng) for m in (train, evaluation, synthetic))
    risk = adversarial_accuracy(evaluation, synthetic, threads) - adversarial_accuracy(train, synthetic, threads)
    logging.info("Adversarial accuracy risk n=%d risk=%.4f", n, risk)
    return risk


def _f1(predicted: np.ndarray, truth: np.ndarray) -> float:
    tp = np.sum(predicted & truth)
    return 2 * tp / (np.sum(predicted) + np.sum(truth)) if tp else 0.0


def membership_inference(members: np.ndarray, non_members: np.ndarray, synthetic: np.ndarray,
                         thresholds: Optional[Sequence[int]] = None, threads: int = None) -> float:
    """
    Membership attack: a target is called a member when a synthetic record lies within Hamming distance tau.
    The score is the best F1 gain over calling every target a member, relative to the room left above that
    baseline, floored at 0.

    :param members: profiles used to train the generator
    :param non_members: held-out profiles
    :param synthetic: the synthetic profiles
    :param thresholds: optional: the tau values swept, every distance 0..width by default
    :return: the score in [0, 1]
    """
    if len(synthetic) == 0:
        raise ValueError("Membership inference needs a non-empty synthetic set.")
    targets = np.vstack([members, non_members]).astype(bool)
    truth = np.r_[np.ones(len(members), dtype=bool), np.zeros(len(non_members), dtype=bool)]
    distances = _nearest(targets, np.asarray(synthetic, dtype=bool), threads=threads)[0][:, 0]
    thresholds = range(targets.shape[1] + 1) if thresholds is None else thresholds
    baseline = _f1(np.ones_like(truth), truth)
    best = max(_f1(distances <= tau, truth) for tau in thresholds)
    score = max(0.0, (best - baseline) / (1.0 - baseline)) if baseline < 1.0 else 0.0
    logging.info("Membership inference targets=%d best_f1=%.4f baseline_f1=%.4f score=%.4f", len(targets), best,
                 baseline, score)
    return score


def _entropy(rate: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(rate * np.log2(rate) + (1 - rate) * np.log2(1 - rate))
    return np.nan_to_num(h)


def attribute_inference(targets: np.ndarray, synthetic: np.ndarray, key_attributes: Sequence[int],
                        sensitive_attributes: Sequence[int], threads: int = None) -> float:
    """
    Attribute attack: the synthetic record nearest to a target on the key columns predicts the target's sensitive
    columns. Each sensitive column scores its accuracy gain over predicting the synthetic majority value, relative
    to the room left above it; columns are weighted by their entropy among the targets. Floored at 0.
    """
    key_attributes, sensitive_attributes = list(key_attributes), list(sensitive_attributes)
    if set(key_attributes) & set(sensitive_attributes):
        raise ValueError("Key and sensitive attributes must be disjoint.")
    if not key_attributes or not sensitive_attributes or len(targets) == 0 or len(synthetic) == 0:
        raise ValueError("Attribute inference needs targets, synthetic records, key and sensitive attributes.")
    targets, synthetic = np.asarray(targets, dtype=bool), np.asarray(synthetic, dtype=bool)
    neighbours = _nearest(targets[:, key_attributes], synthetic[:, key_attributes], threads=threads)[1][:, 0]
    truth = targets[:, sensitive_attributes]
    predicted = synthetic[neighbours][:, sensitive_attributes]
    majority = synthetic[:, sensitive_attributes].mean(axis=0) >= 0.5
    accuracy = (predicted == truth).mean(axis=0)
    baseline = (truth == majority).mean(axis=0)
    room = 1.0 - baseline
    gain = np.divide(accuracy - baseline, room, out=np.zeros_like(accuracy), where=room > 0)
    weights = _entropy(truth.mean(axis=0))
    score = float(np.sum(weights * gain) / np.sum(weights)) if weights.sum() > 0 else 0.0
    score = max(0.0, score)
    logging.info("Attribute inference targets=%d attributes=%d score=%.4f", len(targets), len(sensitive_attributes),
                 score)
    return score


def identity_disclosure(population: np.ndarray, synthetic: np.ndarray, quasi_identifiers: Sequence[int],
                        match_tolerance: float = 0.9) -> float:
    """
    Identity disclosure: a synthetic record discloses a person when exactly one population record shares its
    quasi-identifiers and at least match_tolerance of the remaining columns agree. The score is the share of
    synthetic records weighted by 1 / group size, which is the share of disclosures under the uniqueness rule.
    """
    quasi_identifiers = list(quasi_identifiers)
    if not quasi_identifiers:
        raise ValueError("Identity disclosure needs at least one quasi-identifier.")
    population, synthetic = np.asarray(population, dtype=bool), np.asarray(synthetic, dtype=bool)
    if len(synthetic) == 0:
        return 0.0
    rest = [i for i in range(population.shape[1]) if i not in set(quasi_identifiers)]
    groups: Dict[bytes, List[int]] = {}
    for row, key in enumerate(population[:, quasi_identifiers]):
        groups.setdefault(key.tobytes(), []).append(row)
    total = 0.0
    for record in synthetic:
        group = groups.get(record[quasi_identifiers].tobytes(), [])
        if len(group) != 1:
            continue
        agreement = np.mean(population[group[0], rest] == record[rest]) if rest else 1.0
        if agreement >= match_tolerance:
            total += 1.0 / len(group)
    score = total / len(synthetic)
    logging.info("Identity disclosure synthetic=%d score=%.4f", len(synthetic), score)
    return score


@dataclass
class PrivacyReport:
    scores: Dict[str, float]
    threshold: float = PASS_THRESHOLD

    @property
    def passed(self) -> bool:
        return all(score < self.threshold for score in self.scores.values())

    def to_frame(self) -> pd.DataFrame:
        rows = [(name, score, self.threshold, "PASS" if score < self.threshold else "FAIL")
                for name, score in self.scores.items()]
        rows.append(("overall", max(self.scores.values()), self.threshold, "PASS" if self.passed else "FAIL"))
        return pd.DataFrame(rows, columns=["attack", "score", "threshold", "result"])

    def write(self, path):
        atomic_write(path, lambda p: self.to_frame().to_csv(p, index=False))


def evaluate_privacy(train: EventTables, evaluation: EventTables, synthetic: EventTables,
                     cfg: PrivacyConfig = None, threads: int = None) -> PrivacyReport:
    """
    Runs the four attacks on profiles laid out from the training population.

    :param train: the persons the generator was trained on
    :param evaluation: held-out persons from the same source
    :param synthetic: the generated persons
    :param cfg: optional: the attack options
    :param threads: optional: the number of nearest-neighbour jobs
    :return: the PrivacyReport
    """
    cfg = cfg or PrivacyConfig()
    columns = profile_columns(train, cfg.n_concepts)
    train_p, eval_p, synthetic_p = (build_profiles(t, columns) for t in (train, evaluation, synthetic))
    n = min(cfg.sample_size, len(train_p), len(eval_p), len(synthetic_p))
    if n < MIN_SAMPLE_SIZE:
        raise ValueError(f"Privacy evaluation needs at least {MIN_SAMPLE_SIZE} persons per population, got {n}.")
    rng = np.random.default_rng(cfg.seed)
    train_m, eval_m, synthetic_m = (_subsample(p.matrix, n, rng) for p in (train_p, eval_p, synthetic_p))

    keys = train_p.indices(cfg.key_attributes)
    sensitive = train_p.indices(cfg.sensitive_attributes) if cfg.sensitive_attributes else \
        [i for i, c in enumerate(columns) if c.split(":")[0] not in DEMOGRAPHIC_GROUPS]
    sensitive = [i for i in sensitive if i not in set(keys)]
    half = n // 2
    scores = {
        "nnaa_risk": nnaa_risk(train_m, eval_m, synthetic_m, n, cfg.seed, threads),
        "membership_inference": membership_inference(train_m[:half], eval_m[:half], synthetic_m, threads=threads),
        "attribute_inference": attribute_inference(train_m, synthetic_m, keys, sensitive, threads),
        "identity_disclosure": identity_disclosure(train_m, synthetic_m, train_p.indices(cfg.quasi_identifiers),
                                                   cfg.match_tolerance),
    }
    report = PrivacyReport(scores)
    logging.info("Privacy evaluation n=%d passed=%s", n, report.passed)
    return report
