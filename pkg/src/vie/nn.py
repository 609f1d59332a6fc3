"""Dense and masked-autoregressive layers, initialization, optimizers.

Parameters live in flat ``dict[str, ndarray]`` maps keyed by dotted names
(``"enc.0.W"``). Forward functions accept a mapping whose values are either
plain arrays (frozen) or tape tensors (trainable), so the same code serves
training and evaluation.

Weights are stored ``(fan_in, fan_out)`` and applied as ``x @ W + b``.
"""
from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .errors import ContractError, TrainingError

ACTIVATIONS = {"relu": ad.relu, "softplus": ad.softplus, "sigmoid": ad.sigmoid}


def he_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(sizes: Sequence[int], seed, prefix: str = "mlp") -> dict[str, np.ndarray]:
    """He-uniform weights and zero biases for an MLP with layer ``sizes``.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    if any(s <= 0 for s in sizes) or len(sizes) < 2:
        raise ContractError(f"layer sizes must be positive and at least two: {sizes}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = {}
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        params[f"{prefix}.{i}.W"] = he_uniform(rng, a, b)
        params[f"{prefix}.{i}.b"] = np.zeros(b)
    return params


def n_layers(params: Mapping, prefix: str) -> int:
    n = 0
    while f"{prefix}.{n}.W" in params:
        n += 1
    return n


def mlp_forward(params: Mapping, prefix: str, x, activation: str = "relu"):
    """Affine/activation stack; the last layer stays affine."""
    act = ACTIVATIONS[activation]
    depth = n_layers(params, prefix)
    if depth == 0:
        raise ContractError(f"no layers under prefix {prefix!r}")
    h = x
    for i in range(depth):
        W = params[f"{prefix}.{i}.W"]
        if ad.value_of(h).shape[-1] != ad.value_of(W).shape[0]:
            raise ContractError(
                f"{prefix}.{i}: input width {ad.value_of(h).shape[-1]} "
                f"!= layer fan-in {ad.value_of(W).shape[0]}")
        last = i == depth - 1
        if activation == "relu" or last:
            h = ad.dense(h, W, params[f"{prefix}.{i}.b"], None if last else "relu")
        else:
            h = act(ad.dense(h, W, params[f"{prefix}.{i}.b"]))
    return h


# -- masked autoregressive networks -----------------------------------------

def made_degrees(p: int, hidden: Sequence[int], reverse: bool = False, n_context: int = 0):
    """Degrees for inputs, hidden layers and outputs of a MADE stack.

    Inputs get degrees ``1..p`` (reversed when ``reverse``); hidden units
    cycle through ``1..max(p-1, 1)``; context inputs get degree 0 so they
    reach every hidden unit but never an output directly.
    """
    d_in = np.arange(1, p + 1)
    if reverse:
        d_in = d_in[::-1]
    d_in = np.concatenate([np.zeros(n_context, dtype=int), d_in])
    top = max(p - 1, 1)
    d_hidden = [np.arange(h) % top + 1 for h in hidden]
    d_out = np.arange(1, p + 1)[::-1] if reverse else np.arange(1, p + 1)
    return d_in, d_hidden, d_out


def made_masks(p: int, hidden: Sequence[int], n_heads: int = 2, reverse: bool = False,
               n_context: int = 0) -> list[np.ndarray]:
    """Binary masks (fan_in x fan_out) for a MADE stack with ``n_heads`` outputs of size p."""
    d_in, d_hidden, d_out = made_degrees(p, hidden, reverse, n_context)
    masks = []
    prev = d_in
    for d in d_hidden:
        masks.append((d[None, :] >= prev[:, None]).astype(np.float64))
        prev = d
    out = np.tile(d_out, n_heads)
    masks.append((out[None, :] > prev[:, None]).astype(np.float64))
    _check_autoregressive(masks, d_in, out, n_context)
    return masks


def _check_autoregressive(masks, d_in, d_out, n_context):
    # end-to-end connectivity must be strictly below the output degree
    reach = masks[0]
    for m in masks[1:]:
        reach = (reach @ m) > 0
    for j, dj in enumerate(d_out):
        for i, di in enumerate(d_in):
            if i >= n_context and reach[i, j] and di >= dj:
                raise ContractError("mask degrees violate the autoregressive property")


def init_made(p: int, hidden: Sequence[int], seed, prefix: str, n_heads: int = 2,
              n_context: int = 0) -> dict[str, np.ndarray]:
    sizes = [p + n_context, *hidden, n_heads * p]
    return init_params(sizes, seed, prefix)


def masked_forward(params: Mapping, prefix: str, masks: Sequence[np.ndarray], z, context=None):
    """Run a MADE stack on ``z`` (batch x p) and split into ``(mu, s_raw)``."""
    h = z if context is None else ad.concat([context, z], axis=1)
    last = len(masks) - 1
    for i, mask in enumerate(masks):
        W = params[f"{prefix}.{i}.W"] * mask
        h = ad.dense(h, W, params[f"{prefix}.{i}.b"], "relu" if i < last else None)
    p = ad.value_of(z).shape[1]
    return h[:, :p], h[:, p:2 * p]


# -- optimizers ---------------------------------------------------------------

def _check_grads(grads: Mapping[str, np.ndarray]):
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {name}", component=name)


class Adam:
    """Bias-corrected Adam; replaces the updated arrays in ``params``.

    Step counts are kept per parameter, so updating a subset of the
    parameters (as the extra encoder passes do) leaves the others' bias
    correction untouched.
    """

    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.steps: dict[str, int] = {}
        self.t = 0

    def step(self, params: dict, grads: Mapping[str, np.ndarray]):
        _check_grads(grads)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, g in grads.items():
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            k = self.steps[name] = self.steps.get(name, 0) + 1
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1 ** k)
            v_hat = v / (1 - b2 ** k)
            params[name] = params[name] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self):
        return {"t": self.t, "steps": dict(self.steps), "m": dict(self.m), "v": dict(self.v)}


class RMSprop:
    """RMSprop with squared-gradient decay ``alpha``."""

    def __init__(self, lr=1e-3, alpha=0.9, eps=1e-8):
        self.lr, self.alpha, self.eps = lr, alpha, eps
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict, grads: Mapping[str, np.ndarray]):
        _check_grads(grads)
        self.t += 1
        a = self.alpha
        for name, g in grads.items():
            v = self.v.get(name)
            if v is None:
                v = self.v[name] = np.zeros_like(g)
            v *= a
            v += (1 - a) * g * g
            params[name] = params[name] - self.lr * g / (np.sqrt(v) + self.eps)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Rescale ``grads`` in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * scale
    return norm
