"""
Estimating KL with a critic
===========================

A positive critic r(z) trained to minimise E_p[r] - E_q[log r] recovers
KL(q || p) as E_q[log r] - E_p[r] + 1. Here q = N(mu, 1) and p = N(0, 1),
where the answer is mu^2 / 2.
"""
import numpy as np

from vie.fenchel import Critic, fit_critic, kl_estimate

for mu in (0.5, 1.0, 2.0):
    critic = Critic(latent_dim=1)
    params = critic.init_params(np.random.default_rng(0))
    rng = np.random.default_rng(1)
    fit_critic(critic, params,
               lambda r, n: r.normal(size=(n, 1)),
               lambda r, n: r.normal(mu, 1.0, size=(n, 1)),
               steps=3000, batch=256, rng=rng)
    ev = np.random.default_rng(2)
    est = kl_estimate(critic, params, ev.normal(size=(50_000, 1)), ev.normal(mu, 1.0, size=(50_000, 1)))
    print(f"mu={mu}: estimate {est:.3f}  exact {mu ** 2 / 2:.3f}")
