"""Training loop for the variational event classifier and its ablation variants.

One iteration on a minibatch ``(x, y)``:

1. draw a prior batch ``z_pr ~ p_psi`` and a posterior batch ``z_T ~ q(z | x)``;
2. if the variant matches priors, take one RMSprop step on the critic
   (``critic_loss(z_pr, z_T)``);
3. take one Adam step on encoder, prior and decoder parameters ascending
   ``mean[log p(y | z_T) - lam * log r(z_T) - beta * (log q(z_T) - log p_psi(z_T))]``;
4. repeat the ascent ``encoder_extra_updates`` more times on the encoder only,
   each with fresh noise.

Random streams are derived from ``config.seed`` by :func:`derive_streams`:
``SeedSequence(seed).spawn(5)`` gives, in order, the init, shuffle, noise,
prior and integration generators.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import autodiff as ad
from . import nn
from .amnn import MIDPOINT, RANDOM, Amnn, MlpDecoder, cll_log_likelihood, cll_probability
from .errors import CheckpointError, ContractError, NumericError, TrainingError
from .evt import (DEFAULT_THRESHOLD, MixedGpdParams, learnable_view, mixed_log_pdf_t,
                  mixed_sample, std_normal_log_pdf_t)
from .fenchel import Critic, critic_loss, generator_penalty
from .flow import FlowEncoder, ImplicitEncoder
from .metrics import roc_auc

PRIORS = ("gaussian", "mixed-gpd")
ENCODERS = ("gaussian", "iaf", "implicit")
DECODERS = ("mlp", "amnn")
STREAMS = ("init", "shuffle", "noise", "prior", "integration")
CHECKPOINT_HEADER = "vie-checkpoint v1"


@dataclass(frozen=True)
class VariantSpec:
    prior: str
    encoder: str
    decoder: str
    prior_match: bool

    def __post_init__(self):
        if self.prior not in PRIORS:
            raise ContractError(f"prior must be one of {PRIORS}, got {self.prior!r}")
        if self.encoder not in ENCODERS:
            raise ContractError(f"encoder must be one of {ENCODERS}, got {self.encoder!r}")
        if self.decoder not in DECODERS:
            raise ContractError(f"decoder must be one of {DECODERS}, got {self.decoder!r}")
        if self.encoder == "implicit" and not self.prior_match:
            raise ContractError("an implicit encoder has no density; it needs prior matching")


PRESETS = {
    "vae": VariantSpec("gaussian", "gaussian", "mlp", True),
    "vae-gpd": VariantSpec("mixed-gpd", "gaussian", "amnn", False),
    "iaf-gpd": VariantSpec("mixed-gpd", "iaf", "amnn", False),
    "fenchel-gpd": VariantSpec("mixed-gpd", "implicit", "amnn", True),
    "vie": VariantSpec("mixed-gpd", "iaf", "amnn", True),
}


def preset(name: str) -> VariantSpec:
    try:
        return PRESETS[name.lower()]
    except KeyError:
        raise ContractError(f"unknown variant {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass
class TrainConfig:
    latent_dim: int = 4
    flow_steps: int = 5
    batch_size: int = 200
    epochs: int = 100
    patience: int = 10
    max_iterations: int = 0
    seed: int = 0
    threshold: float = DEFAULT_THRESHOLD
    beta: float | None = None
    lam: float | None = None
    lr: float = 1e-4
    critic_lr: float = 1e-3
    encoder_extra_updates: int = 5
    critic_steps: int = 1
    grad_clip_norm: float = 10.0
    train_integration: str = RANDOM
    eval_integration: str = MIDPOINT
    val_draws: int = 8
    hidden: int = 32
    encoder_layers: int = 3
    bins: int = 100
    lower: float = -5.0
    init_xi: float = 0.1
    init_sigma: float = 0.5
    shared_tail: bool = False
    analytic_kl: bool = False
    standardize: bool = True

    def __post_init__(self):
        for name in ("latent_dim", "batch_size", "epochs", "hidden", "bins", "encoder_layers", "val_draws"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")
        for name in ("flow_steps", "patience", "max_iterations", "encoder_extra_updates",
                     "critic_steps", "grad_clip_norm"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be >= 0")
        if (self.beta is not None and self.beta < 0) or (self.lam is not None and self.lam < 0):
            raise ContractError("beta and lam must be >= 0")
        if self.lr <= 0 or self.critic_lr <= 0:
            raise ContractError("learning rates must be positive")
        if self.init_xi < 0 or self.init_sigma <= 0:
            raise ContractError("initial tail shape must be >= 0 and scale > 0")
        for mode in (self.train_integration, self.eval_integration):
            if mode not in (MIDPOINT, RANDOM):
                raise ContractError(f"unknown integration mode {mode!r}")


def event_rate_weights(rate: float) -> tuple[float, float]:
    """``(lam, beta)`` by prevalence: larger weights once the rate reaches 1%."""
    return (1e-3, 1e-5) if round(rate, 3) >= 0.01 else (1e-4, 1e-6)


def derive_streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(STREAMS, children)}


@dataclass
class Components:
    encoder: Any
    decoder: Any
    critic: Critic | None


def build_components(variant: VariantSpec, config: TrainConfig, in_dim: int) -> Components:
    c = config
    if variant.encoder == "implicit":
        enc = ImplicitEncoder(in_dim, c.latent_dim, c.hidden, c.encoder_layers, prefix="enc")
    else:
        steps = c.flow_steps if variant.encoder == "iaf" else 0
        enc = FlowEncoder(in_dim, c.latent_dim, steps, c.hidden, c.encoder_layers, prefix="enc")
    if variant.decoder == "amnn":
        dec = Amnn(c.latent_dim, c.hidden, 2, c.bins, c.lower, prefix="dec")
    else:
        dec = MlpDecoder(c.latent_dim, c.hidden, 2, prefix="dec")
    critic = Critic(c.latent_dim, c.hidden, 2, prefix="critic") if variant.prior_match else None
    return Components(enc, dec, critic)


def _softplus_inv(v: float) -> float:
    return float(np.log(np.expm1(v)))


def init_parameters(variant: VariantSpec, config: TrainConfig, in_dim: int, event_rate: float,
                    rng: np.random.Generator) -> dict[str, np.ndarray]:
    parts = build_components(variant, config, in_dim)
    params = dict(parts.encoder.init_params(rng))
    if variant.prior == "mixed-gpd":
        p = 1 if config.shared_tail else config.latent_dim
        params["prior.raw_xi"] = np.full(p, _softplus_inv(max(config.init_xi, 1e-8)))
        params["prior.raw_sigma"] = np.full(p, _softplus_inv(config.init_sigma))
    params.update(parts.decoder.init_params(rng, event_rate))
    if parts.critic is not None:
        params.update(parts.critic.init_params(rng))
    return params


@dataclass
class TrainedModel:
    variant: VariantSpec
    config: TrainConfig
    in_dim: int
    params: dict[str, np.ndarray]
    x_mean: np.ndarray
    x_scale: np.ndarray
    lam: float
    beta: float
    history: list[dict] = field(default_factory=list)
    val_history: list[dict] = field(default_factory=list)
    counters: dict[str, int] = field(default_factory=lambda: {"encoder_updates": 0, "critic_updates": 0})
    _parts: Components | None = field(default=None, repr=False, compare=False)

    @property
    def parts(self) -> Components:
        if self._parts is None:
            self._parts = build_components(self.variant, self.config, self.in_dim)
        return self._parts

    def group(self, name: str) -> list[str]:
        return [k for k in self.params if k.startswith(name + ".")]

    @property
    def prior_params(self) -> MixedGpdParams | None:
        if self.variant.prior != "mixed-gpd":
            return None
        xi, sigma = learnable_view(self.params["prior.raw_xi"], self.params["prior.raw_sigma"])
        p = self.config.latent_dim
        xi = np.broadcast_to(ad.value_of(xi), (p,))
        sigma = np.broadcast_to(ad.value_of(sigma), (p,))
        return MixedGpdParams(xi, sigma, self.config.threshold)

    def standardize(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ContractError(f"expected (n, {self.in_dim}) features, got {x.shape}")
        return (x - self.x_mean) / self.x_scale


def new_model(variant: VariantSpec, config: TrainConfig, x, y, rng=None) -> TrainedModel:
    """Initialized, untrained model; standardization statistics come from ``x``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2 or len(x) != len(y) or len(y) == 0:
        raise ContractError("need a nonempty (n, d) feature matrix with n labels")
    rate = float(np.mean(y == 1))
    lam_d, beta_d = event_rate_weights(rate)
    lam = lam_d if config.lam is None else config.lam
    beta = beta_d if config.beta is None else config.beta
    if config.standardize:
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        scale[scale == 0] = 1.0
    else:
        mean, scale = np.zeros(x.shape[1]), np.ones(x.shape[1])
    if rng is None:
        rng = derive_streams(config.seed)["init"]
    params = init_parameters(variant, config, x.shape[1], min(max(rate, 1e-6), 1 - 1e-6), rng)
    return TrainedModel(variant, config, x.shape[1], params, mean, scale, lam, beta)


# -- one iteration ----------------------------------------------------------------

def _guard(component: str, fn, *args):
    try:
        out = fn(*args)
    except NumericError as exc:
        raise TrainingError(f"non-finite value in {component}: {exc}", component=component) from exc
    return out


def _check(component: str, value):
    v = float(ad.value_of(value))
    if not np.isfinite(v):
        raise TrainingError(f"non-finite {component} ({v})", component=component)
    return v


def _log_prior(model: TrainedModel, P, z):
    if model.variant.prior == "gaussian":
        return std_normal_log_pdf_t(z)
    xi, sigma = learnable_view(P["prior.raw_xi"], P["prior.raw_sigma"])
    return mixed_log_pdf_t(z, xi, sigma, model.config.threshold)


def sample_prior(model: TrainedModel, n: int, rng: np.random.Generator) -> np.ndarray:
    prior = model.prior_params
    if prior is None:
        return rng.standard_normal((n, model.config.latent_dim))
    return mixed_sample(prior, n, rng)


def posterior_sample(model: TrainedModel, P, x, noise):
    """``(z, kl_per_row or None)`` for one draw; ``kl`` is ``log q - log p``."""
    enc = model.parts.encoder
    eps, eta = noise
    if model.variant.encoder == "implicit":
        return enc.sample(P, x, eps=eps), None
    draw = enc.sample(P, x, eps=eps, eta=eta)
    if model.config.analytic_kl and model.variant.prior == "gaussian" and not draw.sigmas:
        mu, s = draw.mu0, draw.sigma0
        kl = ad.reduce_sum(0.5 * (ad.square(mu) + ad.square(s) - 1.0) - ad.log(s), axis=1)
        return draw.z_T, kl
    return draw.z_T, draw.log_q - _log_prior(model, P, draw.z_T)


def _ascent_loss(model: TrainedModel, P, x, y, z, kl, rng_int):
    """Negated objective and its component values."""
    mode = model.config.train_integration
    H = _guard("decoder", model.parts.decoder.forward, P, z, mode, rng_int)
    cll = _guard("cll", lambda: ad.reduce_mean(cll_log_likelihood(y, H)))
    terms = {"cll": _check("cll", cll)}
    obj = cll
    if kl is not None:
        kl_mean = ad.reduce_mean(kl)
        terms["kl"] = _check("kl", kl_mean)
        obj = obj - model.beta * kl_mean
    if model.variant.prior_match:
        pen = _guard("critic_penalty", generator_penalty, model.parts.critic, P, z)
        terms["critic_penalty"] = _check("critic_penalty", pen)
        obj = obj - model.lam * pen
    loss = -obj
    terms["loss"] = _check("loss", loss)
    return loss, terms


def _apply(model: TrainedModel, opt, names, tape_leaves, loss):
    grads = dict(zip(names, ad.grad(loss, [tape_leaves[k] for k in names])))
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {k}", component=k)
    norm = nn.clip_global_norm(grads, model.config.grad_clip_norm) if model.config.grad_clip_norm else \
        float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    opt.step(model.params, grads)
    return norm


@dataclass
class Optimizers:
    main: nn.Adam
    critic: nn.RMSprop


def make_optimizers(config: TrainConfig) -> Optimizers:
    return Optimizers(nn.Adam(lr=config.lr), nn.RMSprop(lr=config.critic_lr))


def train_step(model: TrainedModel, x, y, streams: dict[str, np.random.Generator],
               opts: Optimizers) -> dict[str, float]:
    """One full iteration on a standardized minibatch; returns its loss components."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) == 0:
        raise ContractError("empty minibatch")
    n = len(x)
    enc = model.parts.encoder
    noise_rng, int_rng = streams["noise"], streams["integration"]
    omega = model.group("critic")
    theta = [k for k in model.params if not k.startswith("critic.")]
    phi = model.group("enc")
    out: dict[str, float] = {}

    tape = ad.Tape()
    leaves = {k: tape.leaf(model.params[k]) for k in theta}
    noise = enc.draw_noise(noise_rng, n)
    z, kl = _guard("encoder", posterior_sample, model, {**model.params, **leaves}, x, noise)

    if model.variant.prior_match:
        for _ in range(model.config.critic_steps):
            z_pr = sample_prior(model, n, streams["prior"])
            ctape = ad.Tape()
            cleaves = {k: ctape.leaf(model.params[k]) for k in omega}
            closs = _guard("critic_loss", critic_loss, model.parts.critic, cleaves, z_pr, z.value)
            out["critic_loss"] = _check("critic_loss", closs)
            _apply(model, opts.critic, omega, cleaves, closs)
            model.counters["critic_updates"] += 1

    P = {**model.params, **leaves}
    loss, terms = _ascent_loss(model, P, x, y, z, kl, int_rng)
    out.update(terms)
    out["grad_norm"] = _apply(model, opts.main, theta, leaves, loss)
    model.counters["encoder_updates"] += 1

    for _ in range(model.config.encoder_extra_updates):
        tape = ad.Tape()
        leaves = {k: tape.leaf(model.params[k]) for k in phi}
        P = {**model.params, **leaves}
        noise = enc.draw_noise(noise_rng, n)
        z, kl = _guard("encoder", posterior_sample, model, P, x, noise)
        loss, _ = _ascent_loss(model, P, x, y, z, kl, int_rng)
        _apply(model, opts.main, phi, leaves, loss)
        model.counters["encoder_updates"] += 1
    return out


# -- full training -------------------------------------------------------------------

def predict(model: TrainedModel, x, rng: np.random.Generator | None = None, n_draws: int = 1,
            seed: int = 0, chunk: int = 4000) -> np.ndarray:
    """Mean event probability over ``n_draws`` posterior draws (midpoint integration)."""
    if n_draws < 1:
        raise ContractError("n_draws must be >= 1")
    xs = model.standardize(x)
    rng = np.random.default_rng(seed) if rng is None else rng
    enc, dec = model.parts.encoder, model.parts.decoder
    total = np.zeros(len(xs))
    for _ in range(n_draws):
        for a in range(0, len(xs), chunk):
            xb = xs[a:a + chunk]
            noise = enc.draw_noise(rng, len(xb))
            z, _ = posterior_sample(model, model.params, xb, noise)
            H = dec.forward(model.params, ad.value_of(z), model.config.eval_integration)
            total[a:a + chunk] += cll_probability(ad.value_of(H))
    return total / n_draws


def _check_classes(y):
    y = np.asarray(y)
    if not (np.any(y == 1) and np.any(y == 0)):
        raise ContractError("training data needs at least one positive and one negative example")


def train(dataset, variant: VariantSpec | str, config: TrainConfig | None = None, valid=None,
          callback=None) -> TrainedModel:
    """Shuffled minibatch epochs with optional early stopping on validation AUC.

    ``dataset`` and ``valid`` expose ``x`` and ``y``. When ``valid`` is given the
    parameters with the best validation AUC are restored at the end.
    """
    config = config or TrainConfig()
    variant = preset(variant) if isinstance(variant, str) else variant
    _check_classes(dataset.y)
    streams = derive_streams(config.seed)
    model = new_model(variant, config, dataset.x, dataset.y, streams["init"])
    opts = make_optimizers(config)
    xs = model.standardize(dataset.x)
    y = np.asarray(dataset.y, dtype=np.float64)
    n = len(y)
    best = (-np.inf, None)
    stale = 0
    it = 0
    for epoch in range(config.epochs):
        order = streams["shuffle"].permutation(n)
        for a in range(0, n, config.batch_size):
            idx = order[a:a + config.batch_size]
            rec = train_step(model, xs[idx], y[idx], streams, opts)
            rec.update(iteration=it, epoch=epoch)
            model.history.append(rec)
            it += 1
            if config.max_iterations and it >= config.max_iterations:
                break
        if valid is not None and len(np.unique(valid.y)) == 2:
            auc = roc_auc(predict(model, valid.x, seed=config.seed, n_draws=config.val_draws), valid.y)
            model.val_history.append({"epoch": epoch, "iteration": it, "val_auc": auc})
            if callback is not None:
                callback(model, epoch, auc)
            if auc > best[0]:
                best = (auc, {k: v.copy() for k, v in model.params.items()})
                stale = 0
            else:
                stale += 1
                if config.patience and stale >= config.patience:
                    break
        elif callback is not None:
            callback(model, epoch, None)
        if config.max_iterations and it >= config.max_iterations:
            break
    if best[1] is not None:
        model.params = best[1]
    return model


# -- checkpoints ----------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_bool(s: str) -> bool:
    if s not in ("true", "false"):
        raise ValueError(f"expected true/false, got {s!r}")
    return s == "true"


def _parse_float(s: str) -> float:
    try:
        return float(s)
    except ValueError:
        return float.fromhex(s)


_PARSERS = {"int": int, "float": _parse_float, "bool": _parse_bool, "str": str}


def parse_field(cls, name: str, text: str):
    """Parse ``text`` for dataclass field ``name`` of ``cls`` from its annotation."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    if name not in fields:
        raise KeyError(name)
    kind = str(fields[name].type)
    optional = kind.endswith("| None")
    base = kind.replace("| None", "").strip()
    if optional and text == "none":
        return None
    return _PARSERS[base](text)


def checkpoint_save(model: TrainedModel, path) -> None:
    v = model.variant
    lines = [CHECKPOINT_HEADER,
             f"variant prior={v.prior} encoder={v.encoder} decoder={v.decoder} "
             f"prior_match={_fmt(v.prior_match)}"]
    for f in dataclasses.fields(TrainConfig):
        lines.append(f"config {f.name}={_fmt(getattr(model.config, f.name))}")
    lines.append(f"meta in_dim={model.in_dim} lam={_fmt(float(model.lam))} beta={_fmt(float(model.beta))}")
    arrays = {"norm.mean": model.x_mean, "norm.scale": model.x_scale, **model.params}
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        lines.append(f"param {name} {arr.ndim} " + " ".join(str(d) for d in arr.shape))
        lines.append(" ".join(repr(float(a)) for a in arr.ravel()))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _kv(tokens, lineno):
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise CheckpointError(f"expected key=value, got {tok!r}", line=lineno)
        k, val = tok.split("=", 1)
        out[k] = val
    return out


def checkpoint_load(path) -> TrainedModel:
    """Inverse of :func:`checkpoint_save`; any defect raises :class:`CheckpointError`."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].strip() != CHECKPOINT_HEADER:
        got = lines[0].strip() if lines else "<empty>"
        raise CheckpointError(f"unsupported header {got!r}; expected {CHECKPOINT_HEADER!r}", line=1)
    variant = None
    cfg: dict[str, Any] = {}
    meta: dict[str, str] = {}
    arrays: dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines):
        lineno = i + 1
        tokens = lines[i].split()
        if not tokens:
            raise CheckpointError("blank line", line=lineno)
        head = tokens[0]
        try:
            if head == "variant":
                kv = _kv(tokens[1:], lineno)
                variant = VariantSpec(kv["prior"], kv["encoder"], kv["decoder"],
                                      _parse_bool(kv["prior_match"]))
            elif head == "config":
                for k, val in _kv(tokens[1:], lineno).items():
                    cfg[k] = parse_field(TrainConfig, k, val)
            elif head == "meta":
                meta.update(_kv(tokens[1:], lineno))
            elif head == "param":
                if len(tokens) < 3:
                    raise CheckpointError("param line needs a name and a rank", line=lineno)
                name, rank = tokens[1], int(tokens[2])
                dims = tuple(int(d) for d in tokens[3:])
                if len(dims) != rank or any(d < 0 for d in dims):
                    raise CheckpointError(f"param {name}: rank {rank} but dims {dims}", line=lineno)
                if i + 1 >= len(lines):
                    raise CheckpointError(f"param {name}: missing values (truncated file)", line=lineno + 1)
                vals = lines[i + 1].split()
                size = int(np.prod(dims)) if dims else 1
                if len(vals) != size:
                    raise CheckpointError(f"param {name}: expected {size} values, got {len(vals)}",
                                          line=lineno + 1)
                try:
                    arr = np.array([_parse_float(s) for s in vals], dtype=np.float64)
                except ValueError:
                    raise CheckpointError(f"param {name}: malformed number", line=lineno + 1) from None
                arrays[name] = arr.reshape(dims)
                i += 1
            else:
                raise CheckpointError(f"unknown record {head!r}", line=lineno)
        except CheckpointError:
            raise
        except (KeyError, ValueError, ContractError) as exc:
            raise CheckpointError(f"malformed {head} record: {exc}", line=lineno) from None
        i += 1
    if variant is None:
        raise CheckpointError("missing variant record", line=len(lines))
    for k in ("in_dim", "lam", "beta"):
        if k not in meta:
            raise CheckpointError(f"missing meta {k}", line=len(lines))
    try:
        config = TrainConfig(**cfg)
    except (TypeError, ContractError) as exc:
        raise CheckpointError(f"invalid config: {exc}", line=len(lines)) from None
    if "norm.mean" not in arrays or "norm.scale" not in arrays:
        raise CheckpointError("missing normalization statistics", line=len(lines))
    mean, scale = arrays.pop("norm.mean"), arrays.pop("norm.scale")
    model = TrainedModel(variant, config, int(meta["in_dim"]), arrays, mean, scale,
                         _parse_float(meta["lam"]), _parse_float(meta["beta"]))
    expected = init_parameters(variant, config, model.in_dim, 0.5, np.random.default_rng(0))
    missing = set(expected) - set(arrays)
    extra = set(arrays) - set(expected)
    if missing or extra:
        raise CheckpointError(f"parameter set mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}",
                              line=len(lines))
    for k, v in expected.items():
        if arrays[k].shape != v.shape:
            raise CheckpointError(f"param {k}: shape {arrays[k].shape} != {v.shape}", line=len(lines))
    return model
