"""Additive monotonic decoder with a complementary log-log link.

Each latent dimension ``j`` gets a positive integrand ``h_j(s) = exp(net_j(s))``
and contributes ``alpha_j * integral_l^{z_j} h_j(s) ds``. The integral is a
Riemann sum over ``bins`` equal-width bins of the signed interval
``[l, z_j]`` with one node per bin (the midpoint, or a uniform draw inside
the bin during training).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .errors import ContractError

MIDPOINT = "midpoint"
RANDOM = "random"
CLL_CLAMP = 30.0
_P_MAX = float(np.nextafter(1.0, 0.0))


_CHUNK = 1000


def _scalar_mlp(s, *weights, clamp=30.0):
    # exp(clip(net(s))) for a ReLU net with one input and one output,
    # streamed in cache-sized row chunks; backward recomputes activations
    Ws, bs = weights[0::2], weights[1::2]
    depth = len(Ws)
    if s.ndim != 2 or s.shape[1] != 1 or Ws[0].shape[0] != 1 or Ws[-1].shape[1] != 1:
        raise ContractError("scalar_mlp expects (n, 1) inputs and a 1 -> 1 network")
    n = s.shape[0]

    def activations(a):
        acts = [s[a:a + _CHUNK]]
        h = acts[0]
        for i in range(depth):
            h = h @ Ws[i]
            h += bs[i]
            if i < depth - 1:
                np.maximum(h, 0.0, out=h)
            acts.append(h)
        return acts

    pre = np.empty((n, 1))
    for a in range(0, n, _CHUNK):
        pre[a:a + _CHUNK] = activations(a)[-1]
    inside = (pre >= -clamp) & (pre <= clamp)
    out = np.exp(np.clip(pre, -clamp, clamp))

    def vjp(g, needs):
        go = g * out * inside
        want_w = any(needs[1:])
        gs = np.empty_like(s) if needs[0] else None
        gW = [np.zeros_like(W) for W in Ws] if want_w else None
        gb = [np.zeros_like(b) for b in bs] if want_w else None
        for a in range(0, n, _CHUNK):
            acts = activations(a)
            gh = go[a:a + _CHUNK]
            for i in range(depth - 1, -1, -1):
                if want_w:
                    gW[i] += acts[i].T @ gh
                    gb[i] += gh.sum(axis=0)
                if i == 0 and not needs[0]:
                    break
                gh = gh @ Ws[i].T
                if i > 0:
                    gh *= acts[i] > 0
            if needs[0]:
                gs[a:a + _CHUNK] = gh
        grads = [gs]
        for i in range(depth):
            grads += [gW[i] if want_w else None, gb[i] if want_w else None]
        return tuple(grads)

    return out, vjp


ad.register_primitive("scalar_mlp", _scalar_mlp)


def cll_inverse(rate: float) -> float:
    """``a`` with ``1 - exp(-exp(a)) == rate``."""
    return float(np.log(-np.log1p(-rate)))


def _bin_offsets(n: int, bins: int, mode: str, rng):
    if mode == MIDPOINT:
        return np.arange(bins) + 0.5
    if mode == RANDOM:
        if rng is None:
            raise ContractError("random integration nodes need an rng")
        return np.arange(bins) + rng.uniform(size=(n, bins))
    raise ContractError(f"unknown integration mode {mode!r}")


def integrate(net, z_col, lower: float, bins: int, mode: str = MIDPOINT, rng=None):
    """Signed Riemann sum of ``net`` (a positive 1-D function on (n, 1) tensors) over ``[lower, z]``.

    ``z_col`` has shape (n,). Differentiable in ``z`` through the bin width and
    the node positions.
    """
    z_col = ad.as_tensor(z_col)
    n = z_col.shape[0]
    d = (z_col - lower) / bins
    offsets = _bin_offsets(n, bins, mode, rng)
    nodes = lower + ad.reshape(d, (n, 1)) * offsets
    h = net(ad.reshape(nodes, (n * bins, 1)))
    total = ad.reduce_sum(ad.reshape(h, (n, bins)), axis=1)
    return d * total


def cll_log_likelihood(y, H):
    """``log p(y | H)`` under ``P(y=1) = 1 - exp(-exp(H))``; ``H`` is clamped to +-30."""
    y = np.asarray(y, dtype=np.float64)
    a = ad.exp(ad.clamp(H, -CLL_CLAMP, CLL_CLAMP))
    return y * ad.log1mexp(a) - (1.0 - y) * a


def cll_probability(H) -> np.ndarray:
    """Event probability for an array of scores, kept inside (0, 1)."""
    a = np.exp(np.clip(np.asarray(H, dtype=np.float64), -CLL_CLAMP, CLL_CLAMP))
    return np.clip(-np.expm1(-a), 0.0, _P_MAX)


@dataclass
class Amnn:
    """``H(z) = sum_j alpha_j * int_l^{z_j} h_j + gamma``."""

    latent_dim: int = 4
    hidden: int = 32
    layers: int = 2
    bins: int = 100
    lower: float = -5.0
    prefix: str = "dec"
    h_clamp: float = 30.0

    def __post_init__(self):
        if self.bins < 1:
            raise ContractError("bins must be >= 1")
        if not np.isfinite(self.lower):
            raise ContractError("lower integration limit must be finite")

    def init_params(self, rng: np.random.Generator, event_rate: float | None = None):
        params = {}
        sizes = [1, *[self.hidden] * self.layers, 1]
        for j in range(self.latent_dim):
            net = nn.init_params(sizes, rng, f"{self.prefix}.h{j}")
            # small last layer: integrands start close to 1
            net[f"{self.prefix}.h{j}.{self.layers}.W"] *= 0.1
            params.update(net)
        params[f"{self.prefix}.alpha"] = np.ones(self.latent_dim)
        params[f"{self.prefix}.gamma"] = np.zeros(1)
        if event_rate is not None:
            # H(0) matches the prevalence
            h0 = self.forward(params, np.zeros((1, self.latent_dim))).value[0]
            params[f"{self.prefix}.gamma"] = np.array([cll_inverse(event_rate) - h0])
        return params

    def integrand(self, params, j: int):
        prefix = f"{self.prefix}.h{j}"

        weights = []
        for i in range(self.layers + 1):
            weights += [params[f"{prefix}.{i}.W"], params[f"{prefix}.{i}.b"]]

        def h(s):
            return ad.apply_primitive("scalar_mlp", (s, *weights), clamp=self.h_clamp)
        return h

    def integrate_dim(self, params, j: int, z_col, mode: str = MIDPOINT, rng=None):
        return integrate(self.integrand(params, j), z_col, self.lower, self.bins, mode, rng)

    def contributions(self, params, z, mode: str = MIDPOINT, rng=None):
        """Per-dimension integrals (n, p), before the ``alpha`` weights."""
        z = ad.as_tensor(z)
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ContractError(f"expected (n, {self.latent_dim}) latent batch, got {z.shape}")
        cols = [ad.reshape(self.integrate_dim(params, j, z[:, j], mode, rng), (z.shape[0], 1))
                for j in range(self.latent_dim)]
        return ad.concat(cols, axis=1)

    def forward(self, params, z, mode: str = MIDPOINT, rng=None):
        """``H`` for a (n, p) latent batch; returns shape (n,)."""
        parts = self.contributions(params, z, mode, rng)
        alpha = params[f"{self.prefix}.alpha"]
        return ad.reduce_sum(parts * alpha, axis=1) + params[f"{self.prefix}.gamma"]

    def predict_risk(self, params, z) -> np.ndarray:
        return cll_probability(ad.value_of(self.forward(params, z, MIDPOINT)))


def amnn_forward(amnn: Amnn, params, z, mode: str = MIDPOINT, rng=None):
    return amnn.forward(params, z, mode, rng)


@dataclass
class MlpDecoder:
    """Unconstrained ``H(z)`` from a ReLU MLP, used by the plain VAE variant."""

    latent_dim: int = 4
    hidden: int = 32
    layers: int = 2
    prefix: str = "dec"

    def init_params(self, rng: np.random.Generator, event_rate: float | None = None):
        sizes = [self.latent_dim, *[self.hidden] * self.layers, 1]
        params = nn.init_params(sizes, rng, f"{self.prefix}.mlp")
        if event_rate is not None:
            params[f"{self.prefix}.mlp.{self.layers}.b"][:] = cll_inverse(event_rate)
        return params

    def forward(self, params, z, mode: str = MIDPOINT, rng=None):
        out = nn.mlp_forward(params, f"{self.prefix}.mlp", ad.as_tensor(z))
        return ad.reshape(out, (out.shape[0],))

    def predict_risk(self, params, z) -> np.ndarray:
        return cll_probability(ad.value_of(self.forward(params, z)))


def log_softmax(logits):
    """Row-wise log-softmax of a (n, m) tensor."""
    shift = ad.value_of(logits).max(axis=1, keepdims=True)
    s = logits - shift
    return s - ad.log(ad.reduce_sum(ad.exp(s), axis=1, keepdims=True))


def cross_entropy(logits, labels):
    """Mean categorical cross-entropy with integer ``labels``."""
    labels = np.asarray(labels, dtype=int)
    onehot = np.eye(ad.value_of(logits).shape[1])[labels]
    return -ad.reduce_mean(ad.reduce_sum(log_softmax(logits) * onehot, axis=1))


@dataclass
class MulticlassAmnn:
    """``k`` monotone integrals per latent dimension feeding a dense softmax layer."""

    latent_dim: int = 4
    n_nets: int = 3
    n_classes: int = 5
    hidden: int = 32
    layers: int = 2
    bins: int = 100
    lower: float = -5.0
    prefix: str = "mc"

    def __post_init__(self):
        if self.n_classes < 2:
            raise ContractError("multiclass head needs at least two classes")
        self._inner = Amnn(self.latent_dim * self.n_nets, self.hidden, self.layers,
                           self.bins, self.lower, self.prefix)

    def init_params(self, rng: np.random.Generator):
        params = self._inner.init_params(rng)
        params.pop(f"{self.prefix}.alpha")
        params.pop(f"{self.prefix}.gamma")
        width = self.latent_dim * self.n_nets
        params.update({f"{self.prefix}.out.0.W": nn.he_uniform(rng, width, self.n_classes) * 0.1,
                       f"{self.prefix}.out.0.b": np.zeros(self.n_classes)})
        return params

    def features(self, params, z, mode: str = MIDPOINT, rng=None):
        """Monotone features (n, p*k); column ``j*k + i`` is net ``i`` on dimension ``j``."""
        z = ad.as_tensor(z)
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ContractError(f"expected (n, {self.latent_dim}) latent batch, got {z.shape}")
        cols = []
        for j in range(self.latent_dim):
            for i in range(self.n_nets):
                c = self._inner.integrate_dim(params, j * self.n_nets + i, z[:, j], mode, rng)
                cols.append(ad.reshape(c, (z.shape[0], 1)))
        return ad.concat(cols, axis=1)

    def logits(self, params, z, mode: str = MIDPOINT, rng=None):
        return nn.mlp_forward(params, f"{self.prefix}.out", self.features(params, z, mode, rng))

    def forward(self, params, z, mode: str = MIDPOINT, rng=None):
        """Class probabilities (n, m)."""
        return ad.exp(log_softmax(self.logits(params, z, mode, rng)))


def multiclass_forward(head: MulticlassAmnn, params, z):
    return head.forward(params, z)
