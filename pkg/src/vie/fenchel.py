"""Positive critic for the dual form of KL(q || p).

The critic outputs ``r(z) = exp(clip(net(z), -30, 30))``. At its optimum
``r = q / p`` and ``E_q[log r] - E_p[r] + 1`` equals the KL divergence.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .errors import ContractError

RAW_CLAMP = 30.0


@dataclass
class Critic:
    latent_dim: int = 4
    hidden: int = 32
    layers: int = 2
    prefix: str = "critic"

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        sizes = [self.latent_dim, *[self.hidden] * self.layers, 1]
        params = nn.init_params(sizes, rng, f"{self.prefix}.net")
        # start near r = 1
        params[f"{self.prefix}.net.{self.layers}.W"] *= 0.1
        return params

    def log_r(self, params, z):
        z = ad.as_tensor(z)
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ContractError(f"critic expects (n, {self.latent_dim}) inputs, got {z.shape}")
        raw = nn.mlp_forward(params, f"{self.prefix}.net", z)
        return ad.reshape(ad.clamp(raw, -RAW_CLAMP, RAW_CLAMP), (z.shape[0],))

    def r(self, params, z):
        return ad.exp(self.log_r(params, z))


def critic_loss(critic: Critic, params, z_prior, z_post):
    """``mean r(z_prior) - mean log r(z_post)``; minimized over the critic."""
    return ad.reduce_mean(critic.r(params, z_prior)) - ad.reduce_mean(critic.log_r(params, z_post))


def generator_penalty(critic: Critic, params, z_post):
    """``mean log r(z_post)``."""
    return ad.reduce_mean(critic.log_r(params, z_post))


def kl_estimate(critic: Critic, params, z_prior, z_post) -> float:
    """Dual lower bound on KL(q || p) at the current critic."""
    lr_post = ad.value_of(critic.log_r(params, ad.value_of(z_post)))
    r_prior = np.exp(ad.value_of(critic.log_r(params, ad.value_of(z_prior))))
    return float(lr_post.mean() - r_prior.mean() + 1.0)


def fit_critic(critic: Critic, params, sample_prior, sample_post, steps: int, batch: int,
               rng: np.random.Generator, lr: float = 1e-3):
    """Train ``params`` in place by RMSprop on fresh batches from two samplers.

    ``sample_prior(rng, n)`` and ``sample_post(rng, n)`` return (n, p) arrays.
    Returns the list of critic losses.
    """
    opt = nn.RMSprop(lr=lr)
    names = list(params)
    history = []
    for _ in range(steps):
        zp, zq = sample_prior(rng, batch), sample_post(rng, batch)
        tape = ad.Tape()
        leaves = {k: tape.leaf(params[k]) for k in names}
        loss = critic_loss(critic, leaves, zp, zq)
        grads = dict(zip(names, ad.grad(loss, [leaves[k] for k in names])))
        opt.step(params, grads)
        history.append(float(loss.value))
    return history
