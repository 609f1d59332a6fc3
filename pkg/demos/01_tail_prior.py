"""
Heavy tails in the latent prior
===============================

The mixed prior is a standard normal up to u = Phi^-1(0.99) and a generalized
Pareto tail beyond it. Both put 1% of the mass above u; they differ in how far
that 1% reaches.
"""
import numpy as np
from scipy.special import ndtri

from vie.evt import MixedGpdParams, mixed_cdf, mixed_quantile, mixed_sample

u = float(ndtri(0.99))
print(f"threshold u = {u:.4f}")

rng = np.random.default_rng(0)
for xi in (0.0, 0.3, 0.8):
    prior = MixedGpdParams([xi], [0.5], u)
    z = mixed_sample(prior, 200_000, rng)[:, 0]
    q = mixed_quantile(prior, np.array([0.999, 0.9999]))
    print(f"xi={xi:.1f}  P(z>u)={np.mean(z > u):.4f}  q99.9={q[0]:6.2f}  q99.99={q[1]:6.2f}  max={z.max():8.2f}")

print("standard normal            q99.9={:6.2f}  q99.99={:6.2f}".format(ndtri(0.999), ndtri(0.9999)))

# the CDF is continuous at u even though the density jumps
prior = MixedGpdParams([0.3], [0.5], u)
eps = 1e-9
print("CDF just below / above u:", mixed_cdf(prior, u - eps)[0], mixed_cdf(prior, u + eps)[0])
