"""
A monotone risk model
=====================

H(z) = sum_j alpha_j * integral_{-5}^{z_j} h_j(s) ds + gamma, with h_j > 0.
The sign of alpha_j fixes the direction in which risk moves along z_j,
and the complementary log-log link turns H into a probability.
"""
import numpy as np

from vie.amnn import Amnn, cll_probability

rng = np.random.default_rng(1)
amnn = Amnn(latent_dim=2)
params = amnn.init_params(rng, event_rate=0.01)
# gamma is set so the risk at z = 0 equals the event rate
print("risk at z = 0:", round(float(amnn.predict_risk(params, np.zeros((1, 2)))[0]), 4))
params["dec.alpha"] = np.array([1.5, -0.7])

grid = np.linspace(-6, 4, 11)
for j in range(2):
    z = np.zeros((grid.size, 2))
    z[:, j] = grid
    risk = amnn.predict_risk(params, z)
    trend = "increasing" if np.all(np.diff(risk) >= 0) else "decreasing" if np.all(np.diff(risk) <= 0) else "mixed"
    print(f"dim {j} (alpha {params['dec.alpha'][j]:+.1f}): {trend}")
    print("   ", " ".join(f"{r:.3f}" for r in risk))

# the link is steeper in the right tail than a logistic one
H = np.linspace(-4, 1, 6)
print("H     ", " ".join(f"{h:6.2f}" for h in H))
print("cll   ", " ".join(f"{p:6.3f}" for p in cll_probability(H)))
print("logit ", " ".join(f"{p:6.3f}" for p in 1 / (1 + np.exp(-H))))
