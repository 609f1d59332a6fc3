import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vie import metrics as mt
from vie.errors import ContractError


def pairwise_auc(s, y):
    pos, neg = s[y == 1], s[y == 0]
    total = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a, b in itertools.product(pos, neg))
    return total / (len(pos) * len(neg))


def threshold_ap(s, y):
    # walk the distinct thresholds from high to low
    ap, prev_recall = 0.0, 0.0
    for t in sorted(set(s), reverse=True):
        sel = s >= t
        tp = np.sum(y[sel] == 1)
        recall = tp / np.sum(y == 1)
        ap += (recall - prev_recall) * tp / np.sum(sel)
        prev_recall = recall
    return ap


def test_auc_examples():
    assert mt.roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert mt.roc_auc(np.ones(10), np.r_[np.zeros(5), np.ones(5)]) == 0.5
    s, y = np.array([0.1, 0.4, 0.35, 0.8]), np.array([0, 0, 1, 1])
    assert mt.roc_auc(s, y) == 0.75 == pairwise_auc(s, y)


def test_auc_matches_pairwise_oracle_on_random_tied_data():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(2, 201))
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        s = rng.integers(0, int(rng.integers(1, 20)), n) / 7.0
        assert mt.roc_auc(s, y) == pairwise_auc(s, y)


def test_single_class_rejected():
    with pytest.raises(ContractError):
        mt.roc_auc([0.1, 0.2], [1, 1])
    with pytest.raises(ContractError):
        mt.auprc([0.1, 0.2], [0, 0])


def test_auprc_examples():
    assert mt.auprc([0.9, 0.1], [1, 0]) == 1.0
    assert mt.auprc([0.1, 0.9], [1, 0]) == 0.5
    y = np.r_[np.ones(3), np.zeros(17)]
    assert abs(mt.auprc(np.full(20, 0.4), y) - 0.15) < 1e-15
    assert abs(mt.auprc([0.9, 0.5, 0.5, 0.1], [1, 0, 1, 0]) - (0.5 + 0.5 * 2 / 3)) < 1e-15
    assert abs(mt.auprc([0.5, 0.5, 0.9, 0.2, 0.2], [1, 0, 0, 1, 1]) - (1 / 3 * 1 / 3 + 2 / 3 * 3 / 5)) < 1e-15


def test_auprc_matches_threshold_walk():
    rng = np.random.default_rng(1)
    for _ in range(300):
        n = int(rng.integers(2, 60))
        y = rng.integers(0, 2, n)
        y[0] = 1
        s = rng.integers(0, 6, n).astype(float)
        assert abs(mt.auprc(s, y) - threshold_ap(s, y)) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 30), st.integers(0, 1)), min_size=2, max_size=40))
def test_invariances(rows):
    s = np.array([r[0] for r in rows]) / 30.0
    y = np.array([r[1] for r in rows])
    if y.min() == y.max():
        return
    perm = np.random.default_rng(0).permutation(len(s))
    assert mt.roc_auc(s, y) == mt.roc_auc(s[perm], y[perm])
    assert mt.roc_auc(s, y) == mt.roc_auc(np.exp(3 * s) - 2, y)
    assert abs(mt.auprc(s, y) - mt.auprc(s[perm], y[perm])) < 1e-12


def test_auprc_not_bounded_below_by_prevalence():
    # the worst ranking drops average precision under the prevalence
    assert mt.auprc([4, 3, 2, 1], [0, 0, 1, 1]) < 0.5
    rng = np.random.default_rng(9)
    y = (rng.uniform(size=4000) < 0.1).astype(int)
    assert mt.auprc(rng.uniform(size=4000), y) > 0.9 * y.mean()


def test_bce_examples():
    assert abs(mt.bce([0.5], [1]) - 0.693147) < 1e-6
    assert mt.bce([1.0, 0.0], [1, 0]) < 1e-11
    s, y = np.array([0.2, 0.7, 0.9]), np.array([0, 1, 0])
    by_hand = -(np.log(0.8) + np.log(0.7) + np.log(0.1)) / 3
    assert abs(mt.bce(s, y) - by_hand) < 1e-15
    assert abs(mt.positive_case_bce(s, y) + np.log(0.7)) < 1e-15


def test_micro_f1():
    y = np.random.default_rng(2).integers(0, 5, 300)
    assert mt.micro_f1(y, y) == 1.0
    assert mt.micro_f1((y + 1) % 5, y) == 0.0
    p = np.random.default_rng(3).integers(0, 5, 300)
    assert abs(mt.micro_f1(p, y) - np.mean(p == y)) < 1e-15


def test_curves():
    s, y = np.array([0.9, 0.5, 0.5, 0.1]), np.array([1, 0, 1, 0])
    fpr, tpr = mt.roc_curve(s, y)
    np.testing.assert_array_equal(fpr, [0, 0, 0.5, 1])
    np.testing.assert_array_equal(tpr, [0, 0.5, 1, 1])
    assert abs(np.trapezoid(tpr, fpr) - mt.roc_auc(s, y)) < 1e-15
    rec, prec = mt.pr_curve(s, y)
    np.testing.assert_allclose(prec, [1, 2 / 3, 0.5])


def test_bootstrap_constant_and_deterministic():
    rng = np.random.default_rng(4)
    y = np.r_[np.ones(10), np.zeros(90)].astype(int)
    s = rng.normal(size=100) + y
    rep = mt.bootstrap(lambda a, b: 0.3, s, y, B=50, seed=1)
    assert rep.ci_low == rep.ci_high == 0.3
    a, b = mt.bootstrap("auc", s, y, B=100, seed=5), mt.bootstrap("auc", s, y, B=100, seed=5)
    assert a == b
    assert a.ci_low <= a.estimate <= a.ci_high


def test_bootstrap_coverage_of_point_estimate():
    rng = np.random.default_rng(6)
    hits = 0
    for _ in range(100):
        y = np.r_[np.ones(20), np.zeros(180)].astype(int)
        s = rng.normal(size=200) + 0.8 * y
        rep = mt.bootstrap("auc", s, y, B=200, seed=int(rng.integers(1 << 30)))
        hits += rep.ci_low <= rep.estimate <= rep.ci_high
    assert hits >= 95


def test_bootstrap_failed_resamples_are_counted():
    calls = {"n": 0}

    def flaky(s, y):
        calls["n"] += 1
        if calls["n"] % 3 == 0:
            raise ContractError("boom")
        return 1.0

    rep = mt.bootstrap(flaky, np.arange(10.0), np.r_[np.ones(5), np.zeros(5)], B=10, seed=0)
    assert rep.redraws > 0 and rep.B == 10
    with pytest.raises(ContractError):
        mt.bootstrap("auc", [0.1], [1], B=0)
