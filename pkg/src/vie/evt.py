"""Generalized Pareto and mixed Gaussian/GPD distributions.

The mixed prior is standard normal below a shared threshold ``u`` and a GPD
tail above it, independently per latent dimension. Its CDF is continuous at
``u``; the density generally is not.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from . import autodiff as ad
from .errors import ContractError, DomainError

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
DEFAULT_THRESHOLD = float(ndtri(0.99))
_XI_ZERO = 1e-12
_XI_SERIES = 1e-4


@dataclass(frozen=True)
class GpdParams:
    xi: float
    sigma: float
    u: float = 0.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ContractError(f"GPD scale must be positive, got {self.sigma}")

    @property
    def upper(self) -> float:
        """Right end of the support."""
        return self.u - self.sigma / self.xi if self.xi < -_XI_ZERO else np.inf


@dataclass(frozen=True)
class MixedGpdParams:
    """Per-dimension tail shape ``xi`` and scale ``sigma`` with shared threshold ``u``."""

    xi: np.ndarray
    sigma: np.ndarray
    u: float = DEFAULT_THRESHOLD
    phi_u: float = field(init=False)

    def __post_init__(self):
        xi = np.atleast_1d(np.asarray(self.xi, dtype=np.float64))
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=np.float64))
        if xi.shape != sigma.shape:
            raise ContractError("xi and sigma must have the same length")
        if np.any(sigma <= 0):
            raise ContractError("sigma must be positive")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "phi_u", float(ndtr(self.u)))

    @property
    def dim(self) -> int:
        return len(self.xi)

    def component(self, j: int) -> GpdParams:
        return GpdParams(float(self.xi[j]), float(self.sigma[j]), self.u)


def gpd_cdf(params: GpdParams, x):
    """GPD CDF; saturates to 0 below ``u`` and to 1 above a bounded support."""
    xi, sigma, u = params.xi, params.sigma, params.u
    x = np.asarray(x, dtype=np.float64)
    w = np.maximum(x - u, 0.0) / sigma
    if abs(xi) < _XI_ZERO:
        out = -np.expm1(-w)
    else:
        base = 1.0 + xi * w
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(base > 0, -np.expm1(-np.log1p(xi * w) / xi), 1.0)
    return out if out.ndim else float(out)


def _log1p_over_xi(xi, w):
    # log1p(xi*w)/xi with a series near xi = 0
    small = np.abs(xi) < _XI_SERIES
    xs = np.where(small, 1.0, xi)
    exact = np.log1p(xs * w) / xs
    series = w - xi * w ** 2 / 2 + xi ** 2 * w ** 3 / 3
    return np.where(small, series, exact)


def gpd_log_pdf(params: GpdParams, x):
    """Log-density on the support; raises :class:`DomainError` outside it."""
    xi, sigma, u = params.xi, params.sigma, params.u
    x = np.asarray(x, dtype=np.float64)
    w = (x - u) / sigma
    if np.any(w < 0) or (xi < 0 and np.any(1.0 + xi * w <= 0)):
        raise DomainError("x outside the GPD support")
    if abs(xi) < _XI_ZERO:
        out = -np.log(sigma) - w
    else:
        out = -np.log(sigma) - _log1p_over_xi(xi, w) - np.log1p(xi * w)
    return out if out.ndim else float(out)


def gpd_quantile(params: GpdParams, p):
    """Inverse of :func:`gpd_cdf` for ``0 <= p < 1``."""
    p = np.asarray(p, dtype=np.float64)
    if np.any((p < 0) | (p >= 1)):
        raise ContractError("quantile level must lie in [0, 1)")
    xi, sigma, u = params.xi, params.sigma, params.u
    t = -np.log1p(-p)  # -log(1-p)
    if abs(xi) < _XI_ZERO:
        out = u + sigma * t
    else:
        out = u + sigma * np.expm1(xi * t) / xi
    return out if out.ndim else float(out)


def tail_reparameterize(params: GpdParams, phi_u: float) -> GpdParams:
    """GPD whose CDF equals ``phi_u + (1 - phi_u) * G(x)`` above ``u``."""
    if not 0 < phi_u < 1:
        raise ContractError("phi_u must lie in (0, 1)")
    xi, sigma, u = params.xi, params.sigma, params.u
    tail = 1.0 - phi_u
    if abs(xi) < _XI_ZERO:
        return GpdParams(xi, sigma, u + sigma * np.log(tail))
    log_tail = np.log(tail)
    sigma_t = sigma * np.exp(xi * log_tail)
    # expm1 keeps (tail^-xi - 1) / xi accurate as xi -> 0
    u_t = u - sigma_t * np.expm1(-xi * log_tail) / xi
    return GpdParams(xi, sigma_t, u_t)


def mixed_cdf(params: MixedGpdParams, z):
    """CDF per dimension; ``z`` broadcasts against the parameter vectors."""
    z = np.asarray(z, dtype=np.float64)
    u, phi_u = params.u, params.phi_u
    w = np.maximum(z - u, 0.0) / params.sigma
    xi = params.xi
    zero = np.abs(xi) < _XI_ZERO
    xs = np.where(zero, 1.0, xi)
    surv = np.where(zero, np.exp(-w), np.exp(-np.log1p(xs * w) / xs))
    return np.where(z <= u, ndtr(z), phi_u + (1.0 - phi_u) * (1.0 - surv))


def mixed_quantile(params: MixedGpdParams, v):
    """Inverse CDF per dimension for ``v`` in ``(0, 1)``."""
    v = np.asarray(v, dtype=np.float64)
    u, phi_u = params.u, params.phi_u
    bulk = v <= phi_u
    q = np.where(bulk, 0.0, (v - phi_u) / (1.0 - phi_u))
    t = -np.log1p(-q)
    xi = params.xi
    zero = np.abs(xi) < _XI_ZERO
    xs = np.where(zero, 1.0, xi)
    tail = u + params.sigma * np.where(zero, t, np.expm1(xs * t) / xs)
    with np.errstate(divide="ignore"):
        return np.where(bulk, ndtri(np.where(bulk, v, 0.5)), tail)


def mixed_sample(params: MixedGpdParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws (n x p) by inverse-CDF sampling."""
    if n < 1:
        raise ContractError("n must be at least 1")
    v = rng.uniform(size=(n, params.dim))
    return mixed_quantile(params, v)


def mixed_log_pdf(params: MixedGpdParams, z):
    """Log-density summed over dimensions; ``z`` is (p,) or (n, p)."""
    return ad.value_of(mixed_log_pdf_t(z, params.xi, params.sigma, params.u))


def mixed_log_pdf_t(z, xi, sigma, u: float = DEFAULT_THRESHOLD):
    """Differentiable mixed log-density, summed over the last axis.

    ``z`` is (p,) or (batch, p); ``xi`` (must be >= 0) and ``sigma`` are (p,)
    and may be tape tensors. At exactly ``z == u`` the Gaussian branch is used.
    """
    zv = ad.value_of(z)
    log_tail_mass = float(np.log1p(-ndtr(u)))
    gauss = -0.5 * ad.square(z) - LOG_SQRT_2PI
    w = (ad.clamp(z, lo=u) - u) / sigma
    xiv = ad.value_of(xi)
    if np.any(xiv < 0):
        raise ContractError("mixed prior requires xi >= 0")
    small = np.broadcast_to(np.abs(xiv) < _XI_SERIES, zv.shape)
    xi_safe = ad.where(small, np.ones(zv.shape), ad.broadcast(xi, zv.shape))
    exact = ad.log1p(xi_safe * w) / xi_safe
    series = w - xi * ad.square(w) / 2.0 + ad.square(xi) * ad.square(w) * w / 3.0
    tail = log_tail_mass - ad.log(sigma) - ad.where(small, series, exact) - ad.log1p(xi * w)
    per_dim = ad.where(zv > u, tail, gauss)
    return ad.reduce_sum(per_dim, axis=-1)


def learnable_view(raw_xi, raw_sigma):
    """Map unconstrained vectors to ``(xi >= 0, sigma > 0)`` via softplus."""
    return ad.softplus(raw_xi), ad.softplus(raw_sigma) + 1e-6


def learnable_params(raw_xi, raw_sigma, u: float = DEFAULT_THRESHOLD) -> MixedGpdParams:
    xi, sigma = learnable_view(raw_xi, raw_sigma)
    return MixedGpdParams(ad.value_of(xi), ad.value_of(sigma), u)


def std_normal_log_pdf_t(z):
    """Standard normal log-density summed over the last axis."""
    return ad.reduce_sum(-0.5 * ad.square(z) - LOG_SQRT_2PI, axis=-1)
