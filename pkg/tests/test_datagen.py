import numpy as np
import pytest

from vie import datagen as dg
from vie.errors import ContractError, DomainError
from vie.metrics import roc_auc


def test_weibull_examples():
    assert dg.weibull_time(1.0, 0.0) == 0.0
    assert abs(dg.weibull_time(np.exp(-1.0), 0.0, 1.0, 1.0) - 1.0) < 1e-15
    with pytest.raises(DomainError):
        dg.weibull_time(0.0, 0.0)


def test_weibull_distribution():
    rng = np.random.default_rng(0)
    t = dg.weibull_time(1.0 - rng.uniform(size=10_000), 0.0, 1.0, 1.0)
    assert abs(np.mean(t < np.log(2.0)) - 0.5) < 0.01
    g = 0.7
    t = dg.weibull_time(1.0 - rng.uniform(size=10_000), g, 2.0, 2.0)
    assert abs(np.mean(t < 0.4) - (1 - np.exp(-2.0 * np.exp(g) * 0.4 ** 2))) < 0.015


def test_weibull_no_overflow_for_large_scores():
    t = dg.weibull_time(np.array([0.5]), np.array([800.0]))
    assert np.isfinite(t[0]) and t[0] > 0


def test_calibrate_examples():
    times = np.arange(1.0, 101.0)
    t0 = dg.calibrate_t0(times, 0.05)
    assert t0 == 5.5 and np.mean(times < t0) == 0.05
    assert dg.calibrate_t0(times, 0.5) == np.median(times)
    with pytest.raises(DomainError):
        dg.calibrate_t0(np.ones(100), 0.1)
    with pytest.raises(ContractError):
        dg.calibrate_t0(np.arange(10.0), 0.01)


def test_oracle_risk_increasing():
    g = np.linspace(-5, 5, 101)
    r = dg.oracle_risk(g, 0.3)
    assert np.all(np.diff(r) > 0) and np.all((r > 0) & (r < 1))


@pytest.mark.parametrize("kind", ["linear", "random-mlp"])
def test_semisynthetic(kind):
    cfg = dg.SemiSynthConfig(n=20_000, g_kind=kind, rate=0.05, seed=3)
    a, b = dg.gen_semisynthetic(cfg), dg.gen_semisynthetic(cfg)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
    assert a.x.shape == (20_000, 9)
    assert set(np.unique(a.x[:, 4:])) == {0.0, 1.0}
    assert abs(a.event_rate - 0.05) < 1e-4
    assert roc_auc(a.oracle_risk, a.y) > 0.5


@pytest.fixture(scope="module")
def longtail():
    return dg.gen_longtailed(dg.LongTailConfig(n=20_000, seed=0))


def test_longtail_determinism(longtail):
    again = dg.gen_longtailed(dg.LongTailConfig(n=20_000, seed=0))
    assert np.array_equal(again.x, longtail.x) and np.array_equal(again.y, longtail.y)
    other = dg.gen_longtailed(dg.LongTailConfig(n=20_000, seed=1))
    assert not np.array_equal(other.x, longtail.x)


def test_longtail_tail_fraction(longtail):
    frac = np.mean(longtail.z > dg.DEFAULT_THRESHOLD, axis=0)
    assert np.all(np.abs(frac - 0.01) < 0.002)


def test_longtail_risk_concentrates_in_tail(longtail):
    tail = np.any(longtail.z > dg.DEFAULT_THRESHOLD, axis=1)
    assert longtail.y[tail].mean() > longtail.y.mean()


def test_oracle_ranking_equals_score_ranking(longtail):
    gen = dg.LongTailGenerator(dg.LongTailConfig())
    score = gen.score(longtail.z)
    assert roc_auc(longtail.oracle_risk, longtail.y) == roc_auc(score, longtail.y)


def test_multiclass_split():
    t = np.arange(1.0, 101.0)
    c = dg.multiclass_split(t)
    np.testing.assert_array_equal(np.bincount(c), [5, 10, 15, 30, 40])
    assert np.bincount(c).sum() == 100
    two = dg.multiclass_split(t, [50])
    np.testing.assert_array_equal(two, (t > np.percentile(t, 50)).astype(int))
    with pytest.raises(ContractError):
        dg.multiclass_split(t, [30, 15])


def test_stratified_split(longtail):
    tr, va, te = dg.stratified_split(longtail, seed=0)
    assert len(tr) + len(va) + len(te) == len(longtail)
    assert abs(len(tr) / len(longtail) - 0.6) < 1e-3
    for part in (tr, va, te):
        assert abs(part.event_rate - longtail.event_rate) < 2e-3
    rows = {tuple(r) for r in tr.x[:, :2]} & {tuple(r) for r in te.x[:, :2]}
    assert not rows


def test_dataset_rejects_missing_values():
    x = np.ones((3, 2))
    x[1, 1] = np.nan
    with pytest.raises(ContractError):
        dg.LabeledDataset(x, np.zeros(3))
