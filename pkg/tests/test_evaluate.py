import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mashnet.evaluate import (RankReport, accuracy, accuracy_from_scores, average_rank, rank_of, read_report,
                              write_report)


def test_oracle_and_constant_scorers():
    labels = ["positive", "negative", "negative", "positive", "negative"]
    assert accuracy_from_scores([1.0 if l == "positive" else 0.0 for l in labels], labels) == 1.0
    assert accuracy_from_scores([0.5] * 5, labels) == pytest.approx(3 / 5)
    with pytest.raises(ValueError):
        accuracy_from_scores([], [])
    with pytest.raises(ValueError):
        accuracy_from_scores([0.3], ["unlabeled"])


def test_accuracy_through_scorer_interface():
    class Ex:
        def __init__(self, candidate, label):
            self.candidate, self.label = candidate, label
    examples = [Ex(0.9, "positive"), Ex(0.2, "negative"), Ex(0.7, "negative")]
    assert accuracy(lambda cands: np.array(cands), examples) == pytest.approx(2 / 3)


def test_rank_examples():
    assert rank_of(0.9, [0.1, 0.2, 0.3]) == 1
    assert rank_of(0.0, [0.1, 0.2, 0.3, 0.4, 0.5]) == 6
    assert rank_of(0.5, [0.5, 0.1]) == 2  # ties count against the positive
    with pytest.raises(ValueError):
        rank_of(0.5, [])


def test_random_scorer_mean_rank_near_expectation():
    rng = np.random.default_rng(0)
    groups = [(("p", i), [("u", i, j) for j in range(9)]) for i in range(4000)]
    rep = average_rank(lambda cands: rng.random(len(cands)), groups)
    assert rep.average_rank == pytest.approx(5.5, abs=0.5)
    assert set(rep.pool_sizes) == {9}


def test_average_rank_rejects_bad_input():
    with pytest.raises(ValueError):
        average_rank(lambda c: np.zeros(len(c)), [])
    with pytest.raises(ValueError):
        average_rank(lambda c: np.zeros(len(c)), [("p", [])])
    with pytest.raises(ValueError):
        average_rank(lambda c: np.full(len(c), np.nan), [("p", ["u"])])
    with pytest.raises(ValueError):
        RankReport([3], [1])


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.lists(st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]), min_size=1, max_size=12))
def test_rank_equals_position_in_pessimistic_sort(pos, pool):
    scores = [pos] + pool
    # stable descending sort with the positive placed after every equal item
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i == 0))
    assert rank_of(pos, pool) == order.index(0) + 1


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-500, 500).map(lambda i: i / 100), min_size=2, max_size=12), st.sampled_from([np.exp, np.tanh, lambda x: 3 * x + 1]))
def test_rank_invariant_under_monotone_maps(scores, fn):
    s = np.array(scores)
    assert rank_of(s[0], s[1:]) == rank_of(fn(s)[0], fn(s)[1:])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=12))
def test_accuracy_invariant_under_monotone_maps_fixing_threshold(scores):
    s = np.array(scores)
    labels = np.where(np.arange(len(s)) % 2 == 0, "positive", "negative")
    squashed = 0.5 + 0.5 * np.tanh(4 * (s - 0.5))  # strictly increasing, keeps 0.5 fixed
    assert accuracy_from_scores(s, labels) == accuracy_from_scores(squashed, labels)


def test_report_roundtrip(tmp_path):
    rep = RankReport([1, 2, 1], [20, 20, 19], accuracy=0.9)
    write_report([("premix", rep)], tmp_path / "r.tsv")
    row = read_report(tmp_path / "r.tsv")["premix"]
    assert row["average_rank"] == "1.3333" and row["pool_size"] == "19-20" and row["accuracy"] == "0.9000"
