"""Stochastic encoders: noise-augmented Gaussian base, inverse autoregressive flow,
and an implicit (density-free) sampler.

The base encoder sees ``[x, eps]`` with ``eps ~ N(0, I_p)`` and emits
``(mu0, sigma0)``; ``z0 = mu0 + sigma0 * eta``. Each flow step maps
``z_t = mu_t + sigma_t * z_{t-1}`` with ``(mu_t, sigma_t)`` produced by a
masked network of ``z_{t-1}``, so the step Jacobian is triangular with
diagonal ``sigma_t``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn
from .errors import ContractError
from .evt import LOG_SQRT_2PI

SIGMA_FLOOR = 1e-6
_SOFTPLUS_INV_ONE = float(np.log(np.expm1(1.0)))


def positive(raw):
    return ad.softplus(raw) + SIGMA_FLOOR


@dataclass
class PosteriorDraw:
    z_T: ad.Tensor
    log_q: ad.Tensor
    z0: ad.Tensor
    mu0: ad.Tensor
    sigma0: ad.Tensor
    sigmas: list = field(default_factory=list)
    eps: np.ndarray | None = None
    eta: np.ndarray | None = None


def posterior_log_density(z0, mu0, sigma0, sigmas=()):
    """Exact flow log-density per row.

    ``-sum_j (e_j^2/2 + log(2 pi)/2 + sum_{t=0..T} log sigma_{t,j})`` with
    ``e = (z0 - mu0) / sigma0``.
    """
    for s in (sigma0, *sigmas):
        if np.any(ad.value_of(s) <= 0):
            raise ContractError("flow scales must be positive")
    e = (z0 - mu0) / sigma0
    total = 0.5 * ad.square(e) + LOG_SQRT_2PI + ad.log(sigma0)
    for s in sigmas:
        total = total + ad.log(s)
    return -ad.reduce_sum(total, axis=-1)


def _as_batch(x):
    x = ad.as_tensor(x)
    if x.ndim == 1:
        x = ad.reshape(x, (1, x.shape[0]))
    return x


@dataclass
class FlowEncoder:
    """Gaussian base encoder followed by ``steps`` IAF steps (``steps=0`` is a plain Gaussian encoder)."""

    in_dim: int
    latent_dim: int = 4
    steps: int = 5
    hidden: int = 32
    init_layers: int = 3
    made_layers: int = 2
    reverse: bool = True
    context: bool = False
    prefix: str = "enc"
    masks: list = field(init=False, repr=False)

    def __post_init__(self):
        if self.steps < 0:
            raise ContractError("flow steps must be >= 0")
        hidden = [self.hidden] * self.made_layers
        n_ctx = self.in_dim if self.context else 0
        self.masks = [
            nn.made_masks(self.latent_dim, hidden, 2, self.reverse and t % 2 == 1, n_ctx)
            for t in range(self.steps)
        ]

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        p = self.latent_dim
        sizes = [self.in_dim + p, *[self.hidden] * self.init_layers, 2 * p]
        params = nn.init_params(sizes, rng, f"{self.prefix}.base")
        # base starts close to N(0, I): small output weights, sigma0 near 1
        last = self.init_layers
        params[f"{self.prefix}.base.{last}.W"] *= 0.1
        params[f"{self.prefix}.base.{last}.b"][p:] = _SOFTPLUS_INV_ONE
        n_ctx = self.in_dim if self.context else 0
        for t in range(self.steps):
            step = nn.init_made(p, [self.hidden] * self.made_layers, rng,
                                f"{self.prefix}.iaf{t}", n_context=n_ctx)
            # every step starts near the identity map: mu_t ~ 0, sigma_t ~ 1
            step[f"{self.prefix}.iaf{t}.{self.made_layers}.W"] *= 0.01
            step[f"{self.prefix}.iaf{t}.{self.made_layers}.b"][p:] = _SOFTPLUS_INV_ONE
            params.update(step)
        return params

    def draw_noise(self, rng: np.random.Generator, n: int):
        """``(eps, eta)``: encoder-input noise and reparameterization noise."""
        p = self.latent_dim
        return rng.standard_normal((n, p)), rng.standard_normal((n, p))

    def base(self, params, x, eps):
        x = _as_batch(x)
        if x.shape[1] != self.in_dim:
            raise ContractError(f"expected {self.in_dim} features, got {x.shape[1]}")
        out = nn.mlp_forward(params, f"{self.prefix}.base", ad.concat([x, eps], axis=1))
        p = self.latent_dim
        return out[:, :p], positive(out[:, p:])

    def encode_base(self, params, x, rng=None, eps=None, eta=None):
        """``(mu0, sigma0, z0, eps)``; noise is drawn from ``rng`` unless given."""
        n = _as_batch(x).shape[0]
        if eps is None or eta is None:
            e1, e2 = self.draw_noise(rng, n)
            eps = e1 if eps is None else eps
            eta = e2 if eta is None else eta
        mu0, sigma0 = self.base(params, x, eps)
        z0 = mu0 + sigma0 * eta
        return mu0, sigma0, z0, eps, eta

    def flow_forward(self, params, z0, x=None):
        """Apply all steps; returns ``(z_T, sum_log_sigma per row, [sigma_t])``."""
        z = _as_batch(z0)
        ctx = _as_batch(x) if self.context else None
        sigmas = []
        sum_log = ad.Tensor(np.zeros(z.shape[0]))
        for t, masks in enumerate(self.masks):
            mu, s_raw = nn.masked_forward(params, f"{self.prefix}.iaf{t}", masks, z, ctx)
            sigma = positive(s_raw)
            z = mu + sigma * z
            sigmas.append(sigma)
            sum_log = sum_log + ad.reduce_sum(ad.log(sigma), axis=1)
        return z, sum_log, sigmas

    def sample(self, params, x, rng=None, eps=None, eta=None) -> PosteriorDraw:
        mu0, sigma0, z0, eps, eta = self.encode_base(params, x, rng, eps, eta)
        zT, _, sigmas = self.flow_forward(params, z0, x)
        log_q = posterior_log_density(z0, mu0, sigma0, sigmas)
        return PosteriorDraw(zT, log_q, z0, mu0, sigma0, sigmas, eps, eta)


@dataclass
class ImplicitEncoder:
    """``z = net([x, eps])`` with no tractable density."""

    in_dim: int
    latent_dim: int = 4
    hidden: int = 32
    init_layers: int = 3
    prefix: str = "enc"

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        p = self.latent_dim
        sizes = [self.in_dim + p, *[self.hidden] * self.init_layers, p]
        return nn.init_params(sizes, rng, f"{self.prefix}.implicit")

    def draw_noise(self, rng: np.random.Generator, n: int):
        return rng.standard_normal((n, self.latent_dim)), None

    def sample(self, params, x, rng=None, eps=None, eta=None):
        x = _as_batch(x)
        if x.shape[1] != self.in_dim:
            raise ContractError(f"expected {self.in_dim} features, got {x.shape[1]}")
        if eps is None:
            eps, _ = self.draw_noise(rng, x.shape[0])
        return nn.mlp_forward(params, f"{self.prefix}.implicit", ad.concat([x, eps], axis=1))


def implicit_encode(encoder: ImplicitEncoder, params, x, rng):
    return encoder.sample(params, x, rng)
