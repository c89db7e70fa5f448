import itertools
import math
from datetime import date

import numpy as np
import pandas as pd
import pytest
import torch

from timelinegpt.codec import PatientRecord, TokenSequence, Visit, build_vocabulary
from timelinegpt.codec.tokens import END, VE
from timelinegpt.evaluation import LabeledExample
from timelinegpt.zeroshot import (Outcome, TaskConfig, classify_trajectory, evaluate_task, expand_outcomes, load_task,
                                  simulate_probability)

PREFIX = ("year:2000", "age:40", "gender:8532", "race:8527", "[VS]", "VT:9202", VE)
# time, outcome, noise, end
CHAIN = ("D10", "VT:9201", "C:1", END)


@pytest.fixture
def chain_vocab():
    return build_vocabulary([TokenSequence.from_tokens(PREFIX + CHAIN)])


def _task(**overrides):
    values = dict(task_name="readmission", outcome_events=[9201], prediction_window_start=0,
                  prediction_window_end=30, max_new_tokens=6, n_simulations=50)
    values.update(overrides)
    return TaskConfig(**values)


def test_task_file_fields(tmp_path):
    path = tmp_path / "readmission.yml"
    path.write_text('task_name: "30_day_readmission_prediction"\n'
                    'outcome_events: ["9201", "262", "8971", "8920"]\n'
                    'include_descendants: false\n'
                    'prediction_window_start: 0\n'
                    'prediction_window_end: 30\n'
                    'max_new_tokens: 128\n', encoding="utf-8")
    task = load_task(path)
    assert task.outcome_events == [9201, 262, 8971, 8920]
    assert task.n_simulations == 50
    assert expand_outcomes(task) == {9201, 262, 8971, 8920}


@pytest.mark.parametrize("overrides", [dict(outcome_events=[]), dict(prediction_window_start=30),
                                       dict(prediction_window_start=-1), dict(max_new_tokens=0),
                                       dict(n_simulations=0)])
def test_task_validation(overrides):
    with pytest.raises(ValueError):
        _task(**overrides)


def test_unknown_task_field_is_rejected(tmp_path):
    path = tmp_path / "task.yml"
    path.write_text("task_name: t\noutcome_events: [1]\nprediction_window: 30\n", encoding="utf-8")
    with pytest.raises(ValueError, match="prediction_window"):
        load_task(path)


def test_expand_outcomes():
    ancestry = pd.DataFrame({"ancestor_id": [1, 1, 2, 5], "descendant_id": [2, 3, 4, 6]})
    task = _task(outcome_events=[1, 7], include_descendants=True)
    assert expand_outcomes(task, ancestry) == {1, 2, 3, 4, 7}
    assert expand_outcomes(_task(outcome_events=[7], include_descendants=True), ancestry) == {7}
    again = _task(outcome_events=sorted(expand_outcomes(task, ancestry)), include_descendants=True)
    assert expand_outcomes(again, ancestry) == expand_outcomes(task, ancestry)
    with pytest.raises(ValueError):
        expand_outcomes(task)


@pytest.mark.parametrize("tokens,expected", [
    (["D10", "[VS]", "VT:9201"], Outcome.POSITIVE),
    (["D10", "[VS]", "VT:9202", "C:9201"], Outcome.POSITIVE),
    (["D30", "[VS]", "VT:9201"], Outcome.POSITIVE),
    (["D31", "[VS]", "VT:9201"], Outcome.NEGATIVE),
    (["[LT]", "[VS]", "VT:9201"], Outcome.NEGATIVE),
    (["D10", "[VS]", "VT:9202", "[VE]", END], Outcome.CENSORED),
    (["D10", "[VS]", "VT:9202", "C:5", "[VE]", "D2"], Outcome.NEGATIVE),
    (["D20", "[VS]", "VT:9202", "i-D11", "C:9201"], Outcome.NEGATIVE),
    (["D20", "[VS]", "VT:9202", "i-D10", "C:9201"], Outcome.POSITIVE),
])
def test_classify_trajectory(tokens, expected):
    assert classify_trajectory(tokens, frozenset({9201}), _task()) == expected


def test_outcomes_before_the_window_start_do_not_count():
    task = _task(prediction_window_start=5, max_new_tokens=10)
    assert classify_trajectory(["D0", "[VS]", "VT:9201", "[VE]", "D5", "[VS]", "VT:9202"], {9201},
                               task) == Outcome.NEGATIVE
    assert classify_trajectory(["D0", "[VS]", "VT:9202", "[VE]", "D5", "[VS]", "VT:9201"], {9201},
                               task) == Outcome.POSITIVE


def test_max_new_tokens_without_decision_is_negative():
    tokens = ["D1", "[VS]", "VT:9202", "[VE]", "D1", "[VS]", "VT:9201"]
    assert classify_trajectory(tokens, {9201}, _task(max_new_tokens=6)) == Outcome.NEGATIVE
    assert classify_trajectory(tokens, {9201}, _task(max_new_tokens=7)) == Outcome.POSITIVE


def test_wider_windows_never_lose_positives():
    rng = np.random.default_rng(0)
    alphabet = ["D3", "D7", "i-D2", "VT:9201", "C:9201", "C:1", "[VS]", "[VE]", END]
    trajectories = [list(rng.choice(alphabet, size=20)) for _ in range(300)]
    previous = -1
    for end in range(1, 60, 3):
        task = _task(prediction_window_end=end, max_new_tokens=20)
        positives = sum(classify_trajectory(t, {9201}, task) == Outcome.POSITIVE for t in trajectories)
        assert positives >= previous
        previous = positives


def _chain_model(markov_model, vocab, rows):
    """Restricts a Markov model to the chain tokens; rows maps a token to its next-token probabilities."""
    table = torch.full((len(vocab), len(vocab)), -1e4, dtype=torch.float64)
    for token, probabilities in rows.items():
        for target, p in zip(CHAIN, probabilities):
            table[vocab.token_id(token), vocab.token_id(target)] = math.log(p)
    return markov_model(table)


def _exact_probability(rows, task, start=VE):
    """Enumerates every continuation of max_new_tokens chain tokens and conditions on not being censored."""
    mass = {Outcome.POSITIVE: 0.0, Outcome.NEGATIVE: 0.0, Outcome.CENSORED: 0.0}
    for continuation in itertools.product(range(len(CHAIN)), repeat=task.max_new_tokens):
        p, last = 1.0, start
        for index in continuation:
            p *= rows[last][index]
            last = CHAIN[index]
        tokens = [CHAIN[i] for i in continuation]
        elapsed, outcome = 0, Outcome.NEGATIVE
        for token in tokens:
            if token == "D10":
                elapsed += 10
            if elapsed > task.prediction_window_end:
                break
            if token == "VT:9201":
                outcome = Outcome.POSITIVE
                break
            if token == END:
                outcome = Outcome.CENSORED
                break
        mass[outcome] += p
    return mass[Outcome.POSITIVE] / (mass[Outcome.POSITIVE] + mass[Outcome.NEGATIVE])


def _random_rows(rng):
    rows = {}
    for token in (VE,) + CHAIN:
        weights = rng.dirichlet(np.ones(3))
        rows[token] = tuple(0.95 * weights) + (0.05,)
    return rows


def test_simulated_probability_matches_enumeration(markov_model, chain_vocab):
    """Tests 100 random chains: the estimate of 50 simulations lies within 3 binomial deviations of the exact value."""
    rng = np.random.default_rng(7)
    task = _task()
    within = 0
    for prompt in range(100):
        rows = _random_rows(rng)
        exact = _exact_probability(rows, task)
        result = simulate_probability(_chain_model(markov_model, chain_vocab, rows), chain_vocab, PREFIX, task,
                                      frozenset({9201}), seed=11, patient_index=prompt)
        sigma = math.sqrt(exact * (1 - exact) / task.n_simulations)
        within += abs(result.probability - exact) <= 3 * sigma + 1e-12
    assert within >= 95


def test_always_positive_chain(markov_model, chain_vocab):
    rows = {token: (1e-300, 1.0, 1e-300, 1e-300) for token in (VE,) + CHAIN}
    model = _chain_model(markov_model, chain_vocab, rows)
    result = simulate_probability(model, chain_vocab, PREFIX, _task(), frozenset({9201}))
    assert result.probability == 1.0
    assert result.completed == 50 and result.attempts == 50


def test_censoring_cap(markov_model, chain_vocab):
    rows = {token: (1e-300, 1e-300, 1e-300, 1.0) for token in (VE,) + CHAIN}
    result = simulate_probability(_chain_model(markov_model, chain_vocab, rows), chain_vocab, PREFIX,
                                  _task(n_simulations=10), frozenset({9201}))
    assert result.capped
    assert result.attempts == 40
    assert result.censored == 40
    assert result.probability == 0.0


def test_estimates_are_multiples_of_one_over_n_and_seeded(markov_model, chain_vocab):
    rows = _random_rows(np.random.default_rng(3))
    model = _chain_model(markov_model, chain_vocab, rows)
    task = _task(n_simulations=20)
    first = simulate_probability(model, chain_vocab, PREFIX, task, frozenset({9201}), seed=5)
    second = simulate_probability(model, chain_vocab, PREFIX, task, frozenset({9201}), seed=5)
    assert first == second
    assert (first.probability * 20) == pytest.approx(round(first.probability * 20))


def _cohort(n):
    visit = Visit(9202, date(2000, 1, 1), date(2000, 1, 1))
    return [LabeledExample(f"p{i}", i % 2, date(2000, 1, 1), PatientRecord(f"p{i}", 1960, 8532, 8527, (visit,)))
            for i in range(n)]


def test_evaluate_task(markov_model, chain_vocab):
    rows = _random_rows(np.random.default_rng(4))
    model = _chain_model(markov_model, chain_vocab, rows)
    task = _task(n_simulations=10)
    single = evaluate_task(model, chain_vocab, _cohort(8), task, frozenset({9201}), seed=2, n_bootstrap=20,
                           threads=1)
    threaded = evaluate_task(model, chain_vocab, _cohort(8), task, frozenset({9201}), seed=2, n_bootstrap=20,
                             threads=4)
    assert single.predictions.equals(threaded.predictions)
    assert single.predictions["person_id"].tolist() == [f"p{i}" for i in range(8)]
    assert set(single.metrics) == {"auroc", "auprc"}
    assert single.metrics_frame()["task"].unique().tolist() == ["readmission"]


def test_evaluate_task_needs_both_classes(markov_model, chain_vocab):
    cohort = [e for e in _cohort(6) if e.label == 1]
    with pytest.raises(ValueError):
        evaluate_task(markov_model(torch.zeros(len(chain_vocab), len(chain_vocab))), chain_vocab, cohort, _task(),
                      frozenset({9201}))
