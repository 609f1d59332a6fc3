"""Synthetic event data from a proportional-hazards Weibull model.

Both generators draw a risk score per subject, simulate an event time
``t = (-ln U / (lam * exp(score)))^(1/nu)``, and label ``y = 1{t < t0}`` with
``t0`` set so that the realized event rate hits a target. The oracle risk
``1 - exp(-lam * exp(score) * t0^nu)`` is the exact conditional event
probability.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .amnn import Amnn
from .errors import ContractError, DomainError
from .evt import DEFAULT_THRESHOLD, MixedGpdParams, mixed_sample


@dataclass
class LabeledDataset:
    x: np.ndarray
    y: np.ndarray
    oracle_risk: np.ndarray | None = None
    z: np.ndarray | None = None
    times: np.ndarray | None = None
    t0: float | None = None
    split: str | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.y.shape != (self.x.shape[0],):
            raise ContractError(f"bad dataset shapes x={self.x.shape} y={self.y.shape}")
        if not np.all(np.isfinite(self.x)):
            raise ContractError("features contain missing or non-finite values")
        if self.oracle_risk is not None:
            self.oracle_risk = np.asarray(self.oracle_risk, dtype=np.float64)
            if self.oracle_risk.shape != self.y.shape:
                raise ContractError("oracle_risk length differs from labels")

    def __len__(self):
        return len(self.y)

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    @property
    def event_rate(self) -> float:
        return float(np.mean(self.y == 1))

    def subset(self, idx, split: str | None = None) -> "LabeledDataset":
        def take(a):
            return None if a is None else a[idx]
        return LabeledDataset(self.x[idx], self.y[idx], take(self.oracle_risk), take(self.z),
                              take(self.times), self.t0, split)


def weibull_time(u, g, lam: float = 1.0, nu: float = 2.0):
    """Inverse-CDF Weibull proportional-hazards time for uniform draws ``u`` in (0, 1]."""
    u = np.asarray(u, dtype=np.float64)
    if np.any(u <= 0) or np.any(u > 1):
        raise DomainError("uniform draw must lie in (0, 1]")
    if lam <= 0 or nu <= 0:
        raise ContractError("lam and nu must be positive")
    with np.errstate(divide="ignore"):
        # log space keeps large scores from overflowing exp(g)
        return np.exp((np.log(-np.log(u)) - np.log(lam) - np.asarray(g, dtype=np.float64)) / nu)


def oracle_risk(g, t0: float, lam: float = 1.0, nu: float = 2.0):
    """``P(T < t0 | score g)``."""
    log_h = np.log(lam) + np.asarray(g, dtype=np.float64) + nu * np.log(t0)
    return -np.expm1(-np.exp(np.minimum(log_h, 700.0)))


def calibrate_t0(times, target_rate: float) -> float:
    """Cut-off with ``round(target_rate * n)`` times strictly below it.

    The cut sits midway between the k-th and (k+1)-th smallest times.
    """
    t = np.sort(np.asarray(times, dtype=np.float64).ravel())
    n = t.size
    if not 0 < target_rate < 1:
        raise ContractError("target rate must lie in (0, 1)")
    if n * target_rate < 1:
        raise ContractError(f"need at least 1/rate = {1 / target_rate:.0f} times, got {n}")
    if t[0] == t[-1]:
        raise DomainError("all times are equal; no cut-off separates them")
    k = min(max(int(round(target_rate * n)), 1), n - 1)
    return float(0.5 * (t[k - 1] + t[k]))


def multiclass_split(times, percentiles=(5, 15, 30, 60)) -> np.ndarray:
    """Class index = number of percentile cuts strictly below each time."""
    pct = np.asarray(percentiles, dtype=np.float64)
    if pct.ndim != 1 or pct.size == 0 or np.any(np.diff(pct) <= 0) or pct[0] <= 0 or pct[-1] >= 100:
        raise ContractError("percentiles must be strictly increasing inside (0, 100)")
    t = np.asarray(times, dtype=np.float64)
    cuts = np.percentile(t, pct)
    return np.searchsorted(cuts, t, side="left").astype(np.int64)


def stratified_split(ds: LabeledDataset, ratios=(0.6, 0.2, 0.2), seed: int = 0):
    """Split into (train, valid, test) keeping the label mix in every part."""
    ratios = np.asarray(ratios, dtype=np.float64)
    if np.any(ratios <= 0):
        raise ContractError("split ratios must be positive")
    ratios = ratios / ratios.sum()
    rng = np.random.default_rng(seed)
    parts = [[] for _ in ratios]
    for c in np.unique(ds.y):
        idx = rng.permutation(np.nonzero(ds.y == c)[0])
        bounds = np.round(np.cumsum(ratios)[:-1] * idx.size).astype(int)
        for part, chunk in zip(parts, np.split(idx, bounds)):
            part.append(chunk)
    names = ("train", "valid", "test")
    return tuple(ds.subset(np.sort(np.concatenate(p)), names[i]) for i, p in enumerate(parts))


# -- semi-synthetic ----------------------------------------------------------

@dataclass
class SemiSynthConfig:
    n: int = 20000
    n_continuous: int = 4
    n_binary: int = 5
    binary_p: float = 0.3
    g_kind: str = "linear"
    lam: float = 1.0
    nu: float = 2.0
    rate: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ContractError("n must be >= 1")
        if not 0 < self.rate < 1:
            raise ContractError("rate must lie in (0, 1)")
        if self.lam <= 0 or self.nu <= 0:
            raise ContractError("lam and nu must be positive")
        if self.g_kind not in ("linear", "random-mlp"):
            raise ContractError(f"unknown g kind {self.g_kind!r}")


def _relu_mlp(params, prefix, x):
    depth = nn.n_layers(params, prefix)
    h = x
    for i in range(depth):
        h = h @ params[f"{prefix}.{i}.W"] + params[f"{prefix}.{i}.b"]
        if i < depth - 1:
            h = np.maximum(h, 0.0)
    return h


def gen_semisynthetic(config: SemiSynthConfig) -> LabeledDataset:
    c = config
    rng = np.random.default_rng(c.seed)
    x = np.hstack([rng.standard_normal((c.n, c.n_continuous)),
                   (rng.uniform(size=(c.n, c.n_binary)) < c.binary_p).astype(np.float64)])
    d = x.shape[1]
    if c.g_kind == "linear":
        g = x @ rng.standard_normal(d)
    else:
        params = nn.init_params([d, 32, 32, 1], rng, "g")
        g = _relu_mlp(params, "g", x)[:, 0]
    times = weibull_time(1.0 - rng.uniform(size=c.n), g, c.lam, c.nu)
    t0 = calibrate_t0(times, c.rate)
    return LabeledDataset(x, (times < t0).astype(np.int64), oracle_risk(g, t0, c.lam, c.nu),
                          None, times, t0)


# -- long-tailed latent generator -----------------------------------------------

@dataclass
class LongTailConfig:
    n: int = 20000
    latent_dim: int = 4
    n_features: int = 10
    xi: float = 0.3
    sigma: float = 0.5
    threshold: float = DEFAULT_THRESHOLD
    risk_scale: float = 0.122
    lam: float = 1.0
    nu: float = 2.0
    rate: float = 0.01
    seed: int = 0
    generator_seed: int = 12345
    bins: int = 100

    def __post_init__(self):
        if self.n < 1 or self.latent_dim < 1 or self.n_features < 1:
            raise ContractError("sizes must be >= 1")
        if not 0 < self.rate < 1:
            raise ContractError("rate must lie in (0, 1)")
        if self.lam <= 0 or self.nu <= 0 or self.sigma <= 0:
            raise ContractError("lam, nu and sigma must be positive")
        if self.xi < 0:
            raise ContractError("xi must be >= 0")


@dataclass
class LongTailGenerator:
    """Fixed random maps ``g: z -> x`` and ``H: z -> score`` for one generator seed."""

    config: LongTailConfig
    g_params: dict = field(init=False, repr=False)
    h_params: dict = field(init=False, repr=False)
    skip: np.ndarray = field(init=False, repr=False)
    amnn: Amnn = field(init=False, repr=False)

    def __post_init__(self):
        c = self.config
        rng = np.random.default_rng(c.generator_seed)
        p, q = c.latent_dim, c.n_features
        self.g_params = nn.init_params([p, 32, 32, q], rng, "g")
        self.skip = rng.standard_normal((p, q)) / np.sqrt(p)
        self.amnn = Amnn(p, bins=c.bins, prefix="H")
        h = self.amnn.init_params(rng)
        for j in range(p):
            # undo the near-constant start so integrands vary along z
            h[f"H.h{j}.{self.amnn.layers}.W"] *= 10.0
        h["H.alpha"] = rng.uniform(0.5, 1.5, size=p)
        self.h_params = h

    @property
    def prior(self) -> MixedGpdParams:
        c = self.config
        return MixedGpdParams(np.full(c.latent_dim, c.xi), np.full(c.latent_dim, c.sigma), c.threshold)

    def features(self, z):
        return _relu_mlp(self.g_params, "g", z) + z @ self.skip

    def score(self, z, chunk: int = 5000):
        """Centered risk score ``risk_scale * (H(z) - H(0))``."""
        z = np.asarray(z, dtype=np.float64)
        h0 = self.amnn.forward(self.h_params, np.zeros((1, z.shape[1]))).value[0]
        out = np.concatenate([self.amnn.forward(self.h_params, z[a:a + chunk]).value
                              for a in range(0, len(z), chunk)])
        return self.config.risk_scale * (out - h0)


def gen_longtailed(config: LongTailConfig) -> LabeledDataset:
    c = config
    gen = LongTailGenerator(c)
    rng = np.random.default_rng(c.seed)
    z = mixed_sample(gen.prior, c.n, rng)
    x = gen.features(z)
    g = gen.score(z)
    times = weibull_time(1.0 - rng.uniform(size=c.n), g, c.lam, c.nu)
    t0 = calibrate_t0(times, c.rate)
    return LabeledDataset(x, (times < t0).astype(np.int64), oracle_risk(g, t0, c.lam, c.nu),
                          z, times, t0)


def with_seed(config, seed: int):
    return replace(config, seed=seed)
