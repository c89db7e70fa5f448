import logging
from dataclasses import dataclass
from datetime import timedelta
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np
import torch
from sklearn.linear_model import LogisticRegression

from timelinegpt.codec import CodecConfig, PatientRecord, Vocabulary
from timelinegpt.codec.tokens import concept_token
from timelinegpt.evaluation.cohorts import LabeledExample
from timelinegpt.evaluation.metrics import BootstrapResult, binary_report
from timelinegpt.nn import extract_representation

# observation window of the count features, in days relative to the index date, both ends inclusive
DEFAULT_WINDOW = (-365, 0)


def concept_vocabulary(records: Iterable[PatientRecord]) -> Dict[str, int]:
    """
    Assigns a feature column to every concept token observed in the records, in lexicographic order.
    """
    tokens = {concept_token(e.domain, e.concept_id) for r in records for v in r.visits for e in v.events}
    return {token: column for column, token in enumerate(sorted(tokens))}


def bow_features(record: PatientRecord, index_date, vocabulary: Dict[str, int],
                 window: Tuple[int, int] = DEFAULT_WINDOW) -> np.ndarray:
    """
    Counts the concepts recorded inside an observation window around the index date.

    :param record: the patient record
    :param index_date: the date the window is anchored to
    :param vocabulary: the feature column of every concept token; concepts outside it are ignored
    :param window: (first, last) offsets in days from the index date, both inclusive
    :return: a count vector with one entry per vocabulary concept
    """
    first, last = index_date + timedelta(days=window[0]), index_date + timedelta(days=window[1])
    counts = np.zeros(len(vocabulary), dtype=np.int64)
    for visit in record.visits:
        for event in visit.events:
            if first <= event.date <= last:
                column = vocabulary.get(concept_token(event.domain, event.concept_id))
                if column is not None:
                    counts[column] += 1
    return counts


def bow_matrix(examples: Sequence[LabeledExample], vocabulary: Dict[str, int],
               window: Tuple[int, int] = DEFAULT_WINDOW) -> np.ndarray:
    if not examples:
        return np.zeros((0, len(vocabulary)), dtype=np.int64)
    return np.stack([bow_features(e.record, e.index_date, vocabulary, window) for e in examples])


def fit_logistic(X, y, l2: float = 1.0, max_iter: int = 1000) -> LogisticRegression:
    """
    Fits an L2-regularized logistic regression.

    :param X: [n, d] features
    :param y: binary labels
    :param l2: the regularization strength, 0 for an unregularized fit
    :param max_iter: the iteration cap of the solver
    :return: the fitted classifier
    """
    X, y = np.asarray(X, dtype=np.float64), np.asarray(y, dtype=int)
    if len(np.unique(y)) < 2:
        raise ValueError("Logistic regression needs examples of both classes.")
    if l2 < 0:
        raise ValueError("The l2 strength cannot be negative.")
    classifier = LogisticRegression(C=1.0 / l2 if l2 > 0 else np.inf, tol=1e-6, max_iter=max_iter)
    return classifier.fit(X, y)


def sequence_representations(model, vocab: Vocabulary, token_lists: Sequence[Sequence[str]]) -> np.ndarray:
    """
    The frozen final-layer representation of every sequence. Tokens outside the vocabulary are skipped.
    """
    with torch.no_grad():
        rows = [extract_representation(model, vocab.encode(tokens, skip_unknown=True)).numpy()
                for tokens in token_lists]
    return np.stack(rows) if rows else np.zeros((0, model.config.embed_dim))


@dataclass
class ProbeResult:
    metrics: Dict[str, BootstrapResult]
    n_train: int
    n_test: int


def _labels(examples: Sequence[LabeledExample]) -> np.ndarray:
    return np.array([e.label for e in examples], dtype=int)


def linear_probe(model, vocab: Vocabulary, train: Sequence[LabeledExample], test: Sequence[LabeledExample],
                 cfg: CodecConfig = None, l2: float = 1.0, n_bootstrap: int = 1000, seed: int = 0) -> ProbeResult:
    """
    Fits a logistic regression on frozen model representations of the train examples and scores the test examples.

    :param model: the pretrained model, left unchanged
    :param vocab: the model vocabulary
    :param train: the examples the classifier is fit on
    :param test: the examples the metrics are computed on
    :param cfg: optional: the codec options
    :param l2: the regularization strength
    :param n_bootstrap: the number of bootstrap resamples
    :param seed: the bootstrap seed
    :return: AUROC and AUPRC on the test examples
    """
    x_train = sequence_representations(model, vocab, [e.tokens(cfg) for e in train])
    x_test = sequence_representations(model, vocab, [e.tokens(cfg) for e in test])
    classifier = fit_logistic(x_train, _labels(train), l2)
    scores = classifier.predict_proba(x_test)[:, 1]
    result = ProbeResult(binary_report(_labels(test), scores, n_bootstrap, seed), len(train), len(test))
    logging.info("Linear probe train=%d test=%d auroc=%.4f auprc=%.4f", len(train), len(test),
                 result.metrics["auroc"].estimate, result.metrics["auprc"].estimate)
    return result


def bow_baseline(train: Sequence[LabeledExample], test: Sequence[LabeledExample],
                 window: Tuple[int, int] = DEFAULT_WINDOW, l2: float = 1.0, n_bootstrap: int = 1000,
                 seed: int = 0) -> ProbeResult:
    """
    The count-feature baseline: concept counts inside the observation window fed to a logistic regression.
    The feature columns come from the train examples, so a classifier fit on synthetic data scores real data.
    """
    vocabulary = concept_vocabulary(e.record for e in train)
    classifier = fit_logistic(bow_matrix(train, vocabulary, window), _labels(train), l2)
    scores = classifier.predict_proba(bow_matrix(test, vocabulary, window))[:, 1]
    result = ProbeResult(binary_report(_labels(test), scores, n_bootstrap, seed), len(train), len(test))
    logging.info("Count baseline train=%d test=%d features=%d auroc=%.4f", len(train), len(test), len(vocabulary),
                 result.metrics["auroc"].estimate)
    return result


def split_examples(examples: Sequence[LabeledExample], test_fraction: float = 0.2,
                   seed: int = 0) -> Tuple[List[LabeledExample], List[LabeledExample]]:
    """
    Shuffles the examples with a seeded stream and splits off the test share.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1).")
    order = np.random.default_rng(seed).permutation(len(examples))
    n_test = max(1, int(round(len(examples) * test_fraction)))
    test = [examples[i] for i in sorted(order[:n_test])]
    train = [examples[i] for i in sorted(order[n_test:])]
    return train, test
