import numpy as np
import pytest

from timelinegpt.evaluation import auprc, auroc, binary_report, bootstrap, report_frame


def _pairwise_auroc(labels, scores):
    positives = [s for l, s in zip(labels, scores) if l == 1]
    negatives = [s for l, s in zip(labels, scores) if l == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in positives for n in negatives)
    return wins / (len(positives) * len(negatives))


def _stepwise_auprc(labels, scores):
    n_positive = sum(labels)
    points = []
    for threshold in set(scores):
        tp = sum(1 for l, s in zip(labels, scores) if s >= threshold and l == 1)
        fp = sum(1 for l, s in zip(labels, scores) if s >= threshold and l == 0)
        points.append((tp / n_positive, tp / (tp + fp)))
    area, previous = 0.0, 0.0
    for recall in sorted({r for r, _ in points}):
        area += (recall - previous) * max(p for r, p in points if r >= recall)
        previous = recall
    return area


def test_hand_ranked_example():
    scores = (.9, .8, .7, .6, .5, .4)
    labels = (1, 1, 0, 1, 0, 0)
    assert auroc(labels, scores) == pytest.approx(8 / 9)
    # precision 1 up to recall 2/3, then 3/4 at full recall
    assert auprc(labels, scores) == pytest.approx(2 / 3 + 1 / 3 * 3 / 4)


@pytest.mark.parametrize("seed", range(30))
def test_metrics_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 201))
    labels = rng.integers(0, 2, size=n)
    labels[0], labels[1] = 0, 1
    scores = np.round(rng.random(n), 1)
    assert auroc(labels, scores) == pytest.approx(_pairwise_auroc(labels, scores), rel=1e-12)
    assert auprc(labels, scores) == pytest.approx(_stepwise_auprc(labels, scores), rel=1e-12)


def test_perfect_ranking():
    labels = [0, 0, 1, 1, 1]
    scores = [0.1, 0.2, 0.3, 0.4, 0.5]
    assert auroc(labels, scores) == 1.0
    assert auprc(labels, scores) == pytest.approx(1.0)


def test_constant_scores():
    labels = [1, 0, 0, 0, 1, 0, 0, 0]
    scores = [0.3] * 8
    assert auroc(labels, scores) == 0.5
    assert auprc(labels, scores) == pytest.approx(0.25)


@pytest.mark.parametrize("labels,scores", [([1, 1, 1], [0.1, 0.2, 0.3]), ([0, 2, 1], [0.1, 0.2, 0.3]),
                                           ([0, 1], [0.1, 0.2, 0.3]), ([], [])])
def test_invalid_inputs(labels, scores):
    with pytest.raises(ValueError):
        auroc(labels, scores)
    with pytest.raises(ValueError):
        auprc(labels, scores)


def _noisy_scores(rng, n):
    labels = rng.integers(0, 2, size=n)
    return labels, labels + rng.normal(scale=1.5, size=n)


def test_bootstrap_interval_holds_the_estimate():
    labels, scores = _noisy_scores(np.random.default_rng(1), 300)
    result = bootstrap(labels, scores, auroc, n_bootstrap=500, seed=3)
    assert result.estimate == auroc(labels, scores)
    assert result.lower <= result.estimate <= result.upper
    assert result.std > 0
    assert result.n_resamples == 500


def test_bootstrap_is_deterministic_per_seed():
    labels, scores = _noisy_scores(np.random.default_rng(2), 100)
    first = bootstrap(labels, scores, auprc, n_bootstrap=200, seed=5)
    second = bootstrap(labels, scores, auprc, n_bootstrap=200, seed=5)
    assert first == second


def test_bootstrap_interval_shrinks_with_more_data():
    rng = np.random.default_rng(4)
    small = bootstrap(*_noisy_scores(rng, 100), auroc, n_bootstrap=300)
    large = bootstrap(*_noisy_scores(rng, 3000), auroc, n_bootstrap=300)
    assert large.upper - large.lower < small.upper - small.lower


def test_bootstrap_skips_single_class_resamples():
    result = bootstrap([0, 1], [0.2, 0.8], auroc, n_bootstrap=200, seed=0)
    assert 0 < result.n_resamples < 200
    assert result.estimate == 1.0


def test_report_frame():
    labels, scores = _noisy_scores(np.random.default_rng(6), 80)
    frame = report_frame(binary_report(labels, scores, n_bootstrap=50), task="demo")
    assert frame["metric"].tolist() == ["auroc", "auprc"]
    assert frame["task"].tolist() == ["demo", "demo"]
    assert list(frame.columns) == ["task", "metric", "estimate", "std", "lower", "upper", "n_resamples"]
