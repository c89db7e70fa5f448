"""
Zero-shot outcome prediction: a patient history is continued many times by the model and the outcome probability is
the share of simulated futures in which an outcome concept appears inside the prediction window.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch

from timelinegpt.codec import CodecConfig, Vocabulary
from timelinegpt.codec.tokens import TokenClass, token_class, token_value
from timelinegpt.evaluation.cohorts import LabeledExample
from timelinegpt.evaluation.metrics import BootstrapResult, binary_report, report_frame
from timelinegpt.generation.sampler import SamplingConfig, next_token_distribution
from timelinegpt.tables.ancestry import descendants
from timelinegpt.util import atomic_write, derive_seed, load_config

# resampling budget for censored simulations, as a multiple of n_simulations
MAX_ATTEMPTS_FACTOR = 4


class Outcome(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    CENSORED = "censored"


@dataclass
class TaskConfig:
    """
    A zero-shot prediction task. The field names follow the task files:

        task_name: "30_day_readmission_prediction"
        outcome_events: ["9201", "262", "8971", "8920"]
        include_descendants: false
        prediction_window_start: 0
        prediction_window_end: 30
        max_new_tokens: 128
    """
    task_name: str
    outcome_events: List[int]
    include_descendants: bool = False
    prediction_window_start: int = 0
    prediction_window_end: int = 30
    max_new_tokens: int = 128
    n_simulations: int = 50

    def __post_init__(self):
        self.outcome_events = [int(c) for c in self.outcome_events]
        if not self.outcome_events:
            raise ValueError(f"Task [{self.task_name}] field [outcome_events] cannot be empty.")
        if not 0 <= self.prediction_window_start < self.prediction_window_end:
            raise ValueError(f"Task [{self.task_name}] prediction window must satisfy 0 <= start < end.")
        if self.max_new_tokens <= 0:
            raise ValueError(f"Task [{self.task_name}] field [max_new_tokens] must be positive.")
        if self.n_simulations <= 0:
            raise ValueError(f"Task [{self.task_name}] field [n_simulations] must be positive.")


def load_task(path) -> TaskConfig:
    return load_config(TaskConfig, path)


def expand_outcomes(task: TaskConfig, ancestry: Optional[pd.DataFrame] = None) -> FrozenSet[int]:
    """
    Returns the concepts counting as the outcome of a task: the listed ones, with every descendant when the task
    includes descendants. Listed concepts absent from the ancestry table are kept as they are.
    """
    if not task.include_descendants:
        return frozenset(task.outcome_events)
    if ancestry is None:
        raise ValueError(f"Task [{task.task_name}] includes descendants but no ancestry table was loaded.")
    return frozenset(descendants(ancestry, task.outcome_events))


class TrajectoryClassifier:
    """
    Follows a simulated continuation token by token. Time accrues from inter-visit and intra-visit time tokens,
    events share the time of their position; concept and visit type tokens are matched against the outcomes.
    """

    def __init__(self, outcomes: FrozenSet[int], task: TaskConfig, long_term_days: int = 1081):
        self.outcomes = outcomes
        self.start = task.prediction_window_start
        self.end = task.prediction_window_end
        self.long_term_days = long_term_days
        self.elapsed = 0

    def step(self, token: str) -> Optional[Outcome]:
        """
        :return: the outcome decided by this token, None while the simulation must go on
        """
        cls = token_class(token)
        if cls == TokenClass.ATT_LT:
            self.elapsed += self.long_term_days
        elif cls in (TokenClass.ATT_DAY, TokenClass.ATT_INTRA):
            self.elapsed += token_value(token)
        if self.elapsed > self.end:
            return Outcome.NEGATIVE
        if cls in (TokenClass.CONCEPT, TokenClass.VT) and token_value(token) in self.outcomes \
                and self.elapsed >= self.start:
            return Outcome.POSITIVE
        if cls == TokenClass.END:
            return Outcome.CENSORED
        return None


def classify_trajectory(tokens: Iterable[str], outcomes: FrozenSet[int], task: TaskConfig,
                        long_term_days: int = 1081) -> Outcome:
    """
    Classifies a generated continuation: positive when an outcome appears inside the window, censored when the
    sequence ends inside the window, negative once time leaves the window or max_new_tokens are spent.
    """
    classifier = TrajectoryClassifier(outcomes, task, long_term_days)
    for position, token in enumerate(tokens):
        if position >= task.max_new_tokens:
            break
        outcome = classifier.step(token)
        if outcome is not None:
            return outcome
    return Outcome.NEGATIVE


def simulate_trajectory(model, vocab: Vocabulary, prefix_ids: Sequence[int], task: TaskConfig,
                        outcomes: FrozenSet[int], generator: torch.Generator, sampling: SamplingConfig = None,
                        long_term_days: int = 1081) -> Tuple[List[str], Outcome]:
    """
    Samples one continuation, stopping as soon as its outcome is decided.

    :return: the generated tokens and their outcome
    """
    sampling = sampling or SamplingConfig()
    classifier = TrajectoryClassifier(outcomes, task, long_term_days)
    ids = list(prefix_ids)
    generated = []
    with torch.no_grad():
        for _ in range(task.max_new_tokens):
            probs = next_token_distribution(model.next_token_logits(ids), ids, sampling)
            next_id = int(torch.multinomial(probs, 1, generator=generator))
            ids.append(next_id)
            generated.append(vocab.token(next_id))
            outcome = classifier.step(generated[-1])
            if outcome is not None:
                return generated, outcome
    return generated, Outcome.NEGATIVE


@dataclass
class SimulationResult:
    positives: int
    completed: int
    censored: int
    attempts: int
    n_simulations: int

    @property
    def capped(self) -> bool:
        return self.completed < self.n_simulations

    @property
    def probability(self) -> float:
        return self.positives / self.completed if self.completed else 0.0


def simulate_probability(model, vocab: Vocabulary, prefix: Sequence[str], task: TaskConfig,
                         outcomes: FrozenSet[int], seed: int = 0, patient_index: int = 0,
                         sampling: SamplingConfig = None, long_term_days: int = 1081) -> SimulationResult:
    """
    Estimates the probability of the task outcome for one patient. Censored simulations are discarded and replaced
    until n_simulations uncensored ones are collected, within 4 x n_simulations attempts. Attempt a draws from the
    stream seeded with (seed, patient_index, a).

    :param model: any object with a next_token_logits(ids) method
    :param vocab: the model vocabulary
    :param prefix: the patient history tokens; tokens outside the vocabulary are skipped
    :param task: the task definition
    :param outcomes: the expanded outcome concepts
    :param seed: the base seed
    :param patient_index: the stream index of this patient
    :param sampling: optional: the decoding controls, neutral by default
    :param long_term_days: the time accrued by an [LT] token
    :return: the SimulationResult; its probability covers the completed simulations when the cap is reached
    """
    prefix_ids = vocab.encode(prefix, skip_unknown=True)
    if not prefix_ids:
        raise ValueError("Cannot simulate the future of an empty history.")
    positives = completed = censored = attempts = 0
    while completed < task.n_simulations and attempts < MAX_ATTEMPTS_FACTOR * task.n_simulations:
        generator = torch.Generator().manual_seed(derive_seed(seed, patient_index, attempts))
        attempts += 1
        _, outcome = simulate_trajectory(model, vocab, prefix_ids, task, outcomes, generator, sampling,
                                         long_term_days)
        if outcome == Outcome.CENSORED:
            censored += 1
            continue
        completed += 1
        positives += int(outcome == Outcome.POSITIVE)
    result = SimulationResult(positives, completed, censored, attempts, task.n_simulations)
    if result.capped:
        logging.warning("Simulation cap reached patient=%d completed=%d censored=%d attempts=%d", patient_index,
                        completed, censored, attempts)
    return result


@dataclass
class ZeroShotEstimate:
    task_name: str
    predictions: pd.DataFrame
    metrics: Dict[str, BootstrapResult] = field(default_factory=dict)

    def metrics_frame(self) -> pd.DataFrame:
        return report_frame(self.metrics, task=self.task_name)

    def write(self, out_dir):
        atomic_write(f"{out_dir}/predictions.csv", lambda p: self.predictions.to_csv(p, index=False))
        atomic_write(f"{out_dir}/metrics.csv", lambda p: self.metrics_frame().to_csv(p, index=False))


def evaluate_task(model, vocab: Vocabulary, cohort: Sequence[LabeledExample], task: TaskConfig,
                  outcomes: FrozenSet[int], seed: int = 0, n_bootstrap: int = 1000, threads: int = None,
                  cfg: CodecConfig = None, sampling: SamplingConfig = None) -> ZeroShotEstimate:
    """
    Scores a labelled cohort: one simulated probability per patient, then AUROC and AUPRC with bootstrap
    intervals. Patient i draws its simulations from the streams of (seed, i), whatever the number of threads.

    :param model: the trained model, in eval mode
    :param vocab: the model vocabulary
    :param cohort: the labelled examples, with both classes present
    :param task: the task definition
    :param outcomes: the expanded outcome concepts
    :param seed: the base seed of the simulations and of the bootstrap
    :param n_bootstrap: the number of bootstrap resamples
    :param threads: optional: the number of worker threads
    :param cfg: optional: the codec options
    :param sampling: optional: the decoding controls
    :return: the per-patient predictions and the task metrics
    """
    labels = np.array([e.label for e in cohort], dtype=int)
    if len(np.unique(labels)) < 2:
        raise ValueError(f"Task [{task.task_name}] cohort needs at least one positive and one negative patient.")
    cfg = cfg or CodecConfig()

    def run(indexed):
        index, example = indexed
        return simulate_probability(model, vocab, example.tokens(cfg), task, outcomes, seed, index, sampling,
                                    cfg.long_term_days)

    with ThreadPoolExecutor(max_workers=threads) as executor:
        results = list(executor.map(run, enumerate(cohort)))

    predictions = pd.DataFrame({
        "person_id": [e.person_id for e in cohort],
        "label": labels,
        "probability": [r.probability for r in results],
        "completed": [r.completed for r in results],
        "censored": [r.censored for r in results],
        "attempts": [r.attempts for r in results],
    })
    estimate = ZeroShotEstimate(task.task_name, predictions,
                                binary_report(labels, predictions["probability"].to_numpy(), n_bootstrap, seed))
    logging.info("Evaluated task name=%s patients=%d auroc=%.4f auprc=%.4f capped=%d", task.task_name, len(cohort),
                 estimate.metrics["auroc"].estimate, estimate.metrics["auprc"].estimate,
                 sum(r.capped for r in results))
    return estimate
