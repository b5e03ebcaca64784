import numpy as np
import pytest

from gaitsig.classify import RankedPrediction, rank_scores
from gaitsig.errors import DataError
from gaitsig.evalcli.metrics import confusion_matrix, rank_k_accuracy


def ranking(order):
    return RankedPrediction(np.array(order), -np.arange(len(order), dtype=float))


def test_all_correct_any_k():
    preds = [ranking([i, 9, 8]) for i in range(5)]
    for k in (1, 2, 5):
        assert rank_k_accuracy(preds, range(5), k) == 100.0


def test_truth_at_position_three():
    preds = [ranking([7, 8, t, 9, 6]) for t in range(4)]
    assert rank_k_accuracy(preds, range(4), 1) == 0.0
    assert rank_k_accuracy(preds, range(4), 5) == 100.0


def test_rank_k_length_mismatch():
    with pytest.raises(DataError):
        rank_k_accuracy([ranking([0])], [0, 1], 1)


def test_rank_k_bad_k():
    with pytest.raises(ValueError):
        rank_k_accuracy([ranking([0])], [0], 0)


def test_rank_k_matches_counting_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n, C = rng.integers(1, 200), rng.integers(2, 12)
        preds = [rank_scores(np.arange(C), rng.normal(size=C)) for _ in range(n)]
        truth = rng.integers(0, C, size=n)
        k = int(rng.integers(1, C + 1))
        hits = 0
        for p, t in zip(preds, truth):
            for pos in range(k):
                if p.labels[pos] == t:
                    hits += 1
                    break
        assert rank_k_accuracy(preds, truth, k) == 100.0 * hits / n
        assert rank_k_accuracy(preds, truth, 5) >= rank_k_accuracy(preds, truth, 1)


def test_confusion_perfect():
    cm = confusion_matrix(["M", "F", "M"], ["M", "F", "M"], ["F", "M"])
    assert cm.counts.tolist() == [[1, 0], [0, 2]]
    assert cm.accuracy == 100.0


def test_confusion_constant_predictor():
    truth = ["a", "b", "c"] * 4
    cm = confusion_matrix(["b"] * 12, truth, ["a", "b", "c"])
    assert cm.counts[:, 1].tolist() == [4, 4, 4]
    assert cm.accuracy == pytest.approx(100.0 / 3)
    assert cm.row_percentages[:, 1].tolist() == [100.0, 100.0, 100.0]


def test_confusion_unknown_label():
    with pytest.raises(DataError):
        confusion_matrix(["X"], ["M"], ["F", "M"])


def test_confusion_matches_tally_oracle():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        C = rng.integers(2, 6)
        classes = list(range(C))
        n = rng.integers(1, 60)
        truth = rng.integers(0, C, size=n).tolist()
        pred = rng.integers(0, C, size=n).tolist()
        cm = confusion_matrix(pred, truth, classes)
        tally = [[0] * C for _ in range(C)]
        for p, t in zip(pred, truth):
            tally[t][p] += 1
        assert cm.counts.tolist() == tally
        assert cm.counts.sum(axis=1).tolist() == [truth.count(c) for c in classes]
        assert cm.accuracy == 100.0 * sum(tally[i][i] for i in range(C)) / n
