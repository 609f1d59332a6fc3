"""Ranking and likelihood metrics with stratified bootstrap intervals."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.stats import rankdata

from .errors import ContractError

EPS = 1e-12


def _binary(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ContractError(f"scores and labels differ in length: {s.size} vs {y.size}")
    if not np.all((y == 0) | (y == 1)):
        raise ContractError("labels must be 0/1")
    return s, y.astype(bool)


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied positive/negative pairs count one half."""
    s, y = _binary(scores, labels)
    n1 = int(y.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        raise ContractError("AUC needs both classes")
    ranks = rankdata(s)  # average ranks for ties
    u = ranks[y].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def _grouped(s, y):
    # cumulative (tp, fp) at the end of each tie group, scores descending
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(y)[ends]
    fp = (ends + 1) - tp
    return tp, fp


def roc_curve(scores, labels):
    """ROC points ``(fpr, tpr)`` from (0, 0) to (1, 1), one per distinct score."""
    s, y = _binary(scores, labels)
    n1 = int(y.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        raise ContractError("ROC needs both classes")
    tp, fp = _grouped(s, y)
    return np.r_[0.0, fp / n0], np.r_[0.0, tp / n1]


def auprc(scores, labels) -> float:
    """Average precision; tied scores enter the curve as one step."""
    s, y = _binary(scores, labels)
    n1 = int(y.sum())
    if n1 == 0:
        raise ContractError("AUPRC needs at least one positive")
    tp, fp = _grouped(s, y)
    precision = tp / (tp + fp)
    gained = np.diff(np.r_[0, tp])
    return float(np.sum(gained * precision) / n1)


def pr_curve(scores, labels):
    """Precision-recall points ``(recall, precision)``, one per distinct score."""
    s, y = _binary(scores, labels)
    n1 = int(y.sum())
    if n1 == 0:
        raise ContractError("PR curve needs at least one positive")
    tp, fp = _grouped(s, y)
    return tp / n1, tp / (tp + fp)


def _nll(s, y):
    p = np.clip(s, EPS, 1.0 - EPS)
    return -(y * np.log(p) + (~y) * np.log1p(-p))


def bce(scores, labels) -> float:
    s, y = _binary(scores, labels)
    return float(_nll(s, y).mean())


def positive_case_bce(scores, labels) -> float:
    """Mean negative log-likelihood over the positive examples only."""
    s, y = _binary(scores, labels)
    if not y.any():
        raise ContractError("no positive examples")
    return float(_nll(s[y], y[y]).mean())


def micro_f1(predicted, labels) -> float:
    """Micro-averaged F1 for single-label multiclass predictions."""
    p = np.asarray(predicted).ravel()
    y = np.asarray(labels).ravel()
    if p.shape != y.shape:
        raise ContractError("predicted and labels differ in length")
    if p.size == 0:
        raise ContractError("empty input")
    tp = np.sum(p == y)
    fp = fn = p.size - tp  # each miss is one false positive and one false negative
    return float(2 * tp / (2 * tp + fp + fn))


METRICS: dict[str, Callable] = {
    "auc": roc_auc,
    "auprc": auprc,
    "bce": bce,
    "positive_bce": positive_case_bce,
}


@dataclass(frozen=True)
class MetricReport:
    metric: str
    estimate: float
    boot_mean: float
    boot_std: float
    ci_low: float
    ci_high: float
    B: int
    seed: int
    redraws: int = 0

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def bootstrap(metric, scores, labels, B: int = 200, seed: int = 0, max_redraws: int = 1000) -> MetricReport:
    """Stratified bootstrap: each resample keeps the class counts of the input."""
    if B < 1:
        raise ContractError("B must be >= 1")
    name = metric if isinstance(metric, str) else getattr(metric, "__name__", "metric")
    fn = METRICS[metric] if isinstance(metric, str) else metric
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    estimate = float(fn(s, y))
    strata = [np.nonzero(y == c)[0] for c in np.unique(y)]
    rng = np.random.default_rng(seed)
    values = np.empty(B)
    redraws = 0
    b = 0
    while b < B:
        idx = np.concatenate([rng.choice(ix, size=ix.size, replace=True) for ix in strata])
        try:
            values[b] = fn(s[idx], y[idx])
        except (ContractError, FloatingPointError, ValueError):
            redraws += 1
            if redraws > max_redraws:
                raise ContractError(f"{name}: too many failed bootstrap resamples") from None
            continue
        b += 1
    lo, hi = np.percentile(values, [2.5, 97.5])
    return MetricReport(name, estimate, float(values.mean()), float(values.std()),
                        float(lo), float(hi), B, seed, redraws)
