"""Reference learners for imbalanced binary labels: L1 logistic regression and
MLPs trained with class weights, oversampling, importance weights or focal loss.

Every model exposes ``predict(x) -> probabilities`` on raw (unstandardized)
features, like the variational model.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn
from .errors import ContractError, TrainingError
from .metrics import roc_auc

KINDS = ("lasso", "mlp-weighted", "mlp-oversampled", "importance-weighted", "focal")
FOCAL_GAMMAS = (0.1, 0.5, 1.0, 1.5, 2.0)
CLAMP = 1e-12
_P_LO = float(np.nextafter(0.0, 1.0))
_P_HI = float(np.nextafter(1.0, 0.0))


@dataclass(frozen=True)
class BaselineSpec:
    kind: str
    alpha: float = 0.0
    gamma: float = 0.0
    class_weights: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"baseline kind must be one of {KINDS}, got {self.kind!r}")
        if self.alpha < 0 or self.gamma < 0:
            raise ContractError("alpha and gamma must be >= 0")
        if self.class_weights is not None and min(self.class_weights) <= 0:
            raise ContractError("class weights must be positive")


def inverse_prevalence_weights(y) -> tuple[float, float]:
    """``(1, n_neg / n_pos)``: both classes carry equal total weight."""
    y = np.asarray(y)
    pos = int(np.sum(y == 1))
    neg = y.size - pos
    if pos == 0 or neg == 0:
        raise ContractError("class weights need both classes")
    return 1.0, neg / pos


# -- losses ------------------------------------------------------------------------

def focal_loss(p, y, gamma: float):
    """Pointwise ``-(1 - p_t)^gamma * log p_t``."""
    if gamma < 0:
        raise ContractError("gamma must be >= 0")
    p = np.clip(np.asarray(p, dtype=np.float64), CLAMP, 1.0 - CLAMP)
    y = np.asarray(y)
    pt = np.where(y == 1, p, 1.0 - p)
    out = -((1.0 - pt) ** gamma) * np.log(pt)
    return out if out.ndim else float(out)


def _log_sigmoid(a):
    # log sigmoid(a) = -softplus(-a)
    return -ad.softplus(-a)


def bce_from_logits(logits, y):
    """Per-example binary cross-entropy on a tensor of logits."""
    y = np.asarray(y, dtype=np.float64)
    return -(y * _log_sigmoid(logits) + (1.0 - y) * _log_sigmoid(-logits))


def focal_from_logits(logits, y, gamma: float):
    y = np.asarray(y, dtype=np.float64)
    sign = 2.0 * y - 1.0
    log_pt = _log_sigmoid(logits * sign)
    if gamma == 0:
        return -log_pt
    # (1 - p_t)^gamma = exp(gamma * log sigmoid(-s))
    return -ad.exp(gamma * _log_sigmoid(-(logits * sign))) * log_pt


def importance_weighted_loss(p, y, weight) -> float:
    """BCE with per-label weights ``weight = (w0, w1)``, normalized by the batch weight sum."""
    p = np.clip(np.asarray(p, dtype=np.float64), CLAMP, 1.0 - CLAMP)
    y = np.asarray(y)
    w = np.where(y == 1, weight[1], weight[0]).astype(np.float64)
    b = -(y * np.log(p) + (1 - y) * np.log1p(-p))
    return float(np.sum(w * b) / np.sum(w))


def soft_threshold(w, t):
    """Proximal map of ``t * |w|_1``."""
    w = np.asarray(w, dtype=np.float64)
    out = np.sign(w) * np.maximum(np.abs(w) - t, 0.0)
    return out if out.ndim else float(out)


# -- models --------------------------------------------------------------------------

def _sigmoid_prob(logits):
    return np.clip(0.5 * (1.0 + np.tanh(0.5 * logits)), _P_LO, _P_HI)


def _standardizer(x):
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    return mean, scale


@dataclass
class LinearModel:
    w: np.ndarray
    b: float
    mean: np.ndarray
    scale: np.ndarray
    history: list = field(default_factory=list)

    def decision(self, x):
        return ((np.asarray(x, dtype=np.float64) - self.mean) / self.scale) @ self.w + self.b

    def predict(self, x):
        return _sigmoid_prob(self.decision(x))


@dataclass
class LassoConfig:
    steps: int = 2000
    tol: float = 1e-12
    standardize: bool = True


def train_lasso(dataset, alpha: float, config: LassoConfig | None = None) -> LinearModel:
    """L1-penalized logistic regression by proximal gradient with step ``1/L``.

    ``L`` bounds the curvature of the mean logistic loss, so the objective
    never increases; 50 consecutive increases are reported as divergence.
    """
    config = config or LassoConfig()
    if alpha < 0:
        raise ContractError("alpha must be >= 0")
    x = np.asarray(dataset.x, dtype=np.float64)
    y = np.asarray(dataset.y, dtype=np.float64)
    mean, scale = _standardizer(x) if config.standardize else (np.zeros(x.shape[1]), np.ones(x.shape[1]))
    xs = (x - mean) / scale
    n, d = xs.shape
    aug = np.hstack([xs, np.ones((n, 1))])
    L = 0.25 * float(np.linalg.eigvalsh(aug.T @ aug / n)[-1])
    step = 1.0 / L
    w, b = np.zeros(d), 0.0

    def objective(w, b):
        z = xs @ w + b
        return float(np.mean(np.logaddexp(0.0, z) - y * z) + alpha * np.abs(w).sum())

    prev = objective(w, b)
    history = [prev]
    rising = 0
    for _ in range(config.steps):
        tape = ad.Tape()
        wt, bt = tape.leaf(w[:, None]), tape.leaf(np.array([b]))
        logits = ad.reshape(ad.matmul(xs, wt), (n,)) + bt
        loss = ad.reduce_mean(bce_from_logits(logits, y))
        gw, gb = ad.grad(loss, [wt, bt])
        w = soft_threshold(w - step * gw[:, 0], step * alpha)
        b = float(b - step * gb[0])
        cur = objective(w, b)
        history.append(cur)
        rising = rising + 1 if cur > prev else 0
        if rising >= 50:
            raise TrainingError("lasso objective increased for 50 consecutive steps", component="lasso")
        if abs(prev - cur) < config.tol:
            break
        prev = cur
    return LinearModel(w, b, mean, scale, history)


@dataclass
class MlpConfig:
    hidden: int = 32
    layers: int = 3
    epochs: int = 50
    batch_size: int = 200
    lr: float = 1e-3
    seed: int = 0
    patience: int = 10
    grad_clip_norm: float = 10.0
    max_iterations: int = 0


@dataclass
class MlpModel:
    spec: BaselineSpec
    params: dict
    mean: np.ndarray
    scale: np.ndarray
    history: list = field(default_factory=list)

    def logits(self, x):
        xs = (np.asarray(x, dtype=np.float64) - self.mean) / self.scale
        return ad.value_of(nn.mlp_forward(self.params, "mlp", xs))[:, 0]

    def predict(self, x):
        return _sigmoid_prob(self.logits(x))


def oversampled_batches(y, batch_size: int, n_batches: int, rng: np.random.Generator):
    """Index batches drawn with probability inversely proportional to class prevalence."""
    y = np.asarray(y)
    w0, w1 = inverse_prevalence_weights(y)
    p = np.where(y == 1, w1, w0).astype(np.float64)
    p /= p.sum()
    for _ in range(n_batches):
        yield rng.choice(y.size, size=batch_size, replace=True, p=p)


def batch_loss(spec: BaselineSpec, logits, y, weights):
    """Scalar training loss of a baseline on one batch of logits."""
    y = np.asarray(y, dtype=np.float64)
    if spec.kind == "focal":
        return ad.reduce_mean(focal_from_logits(logits, y, spec.gamma))
    per = bce_from_logits(logits, y)
    if spec.kind == "mlp-oversampled" or weights is None:
        return ad.reduce_mean(per)
    w = np.where(y == 1, weights[1], weights[0])
    if spec.kind == "importance-weighted":
        return ad.reduce_sum(per * w) / float(np.sum(w))
    return ad.reduce_mean(per * w)


def train_weighted_mlp(dataset, spec: BaselineSpec, config: MlpConfig | None = None,
                       valid=None) -> MlpModel:
    """Three hidden layers of 32 ReLU units, Adam, early stopping on validation AUC."""
    config = config or MlpConfig()
    if spec.kind == "lasso":
        raise ContractError("use train_lasso for the lasso baseline")
    x = np.asarray(dataset.x, dtype=np.float64)
    y = np.asarray(dataset.y, dtype=np.float64)
    if not (np.any(y == 1) and np.any(y == 0)):
        raise ContractError("training data needs both classes")
    rng = np.random.default_rng(config.seed)
    mean, scale = _standardizer(x)
    xs = (x - mean) / scale
    params = nn.init_params([x.shape[1], *[config.hidden] * config.layers, 1], rng, "mlp")
    model = MlpModel(spec, params, mean, scale)
    weights = spec.class_weights
    if weights is None and spec.kind in ("mlp-weighted", "importance-weighted"):
        weights = inverse_prevalence_weights(y)
    opt = nn.Adam(lr=config.lr)
    n = len(y)
    per_epoch = int(np.ceil(n / config.batch_size))
    best, stale, it = (-np.inf, None), 0, 0
    names = list(params)
    for epoch in range(config.epochs):
        if spec.kind == "mlp-oversampled":
            batches = oversampled_batches(y, config.batch_size, per_epoch, rng)
        else:
            order = rng.permutation(n)
            batches = (order[a:a + config.batch_size] for a in range(0, n, config.batch_size))
        for idx in batches:
            tape = ad.Tape()
            leaves = {k: tape.leaf(model.params[k]) for k in names}
            out = nn.mlp_forward(leaves, "mlp", xs[idx])
            loss = batch_loss(spec, ad.reshape(out, (len(idx),)), y[idx], weights)
            if not np.isfinite(loss.value):
                raise TrainingError("non-finite baseline loss", component=spec.kind)
            grads = dict(zip(names, ad.grad(loss, [leaves[k] for k in names])))
            if config.grad_clip_norm:
                nn.clip_global_norm(grads, config.grad_clip_norm)
            opt.step(model.params, grads)
            model.history.append(float(loss.value))
            it += 1
            if config.max_iterations and it >= config.max_iterations:
                break
        if valid is not None:
            auc = roc_auc(model.predict(valid.x), valid.y)
            if auc > best[0]:
                best, stale = (auc, {k: v.copy() for k, v in model.params.items()}), 0
            else:
                stale += 1
                if config.patience and stale >= config.patience:
                    break
        if config.max_iterations and it >= config.max_iterations:
            break
    if best[1] is not None:
        model.params = best[1]
    return model


def train_baseline(dataset, spec: BaselineSpec, config=None, valid=None):
    if spec.kind == "lasso":
        return train_lasso(dataset, spec.alpha, config if isinstance(config, LassoConfig) else None)
    return train_weighted_mlp(dataset, spec, config if isinstance(config, MlpConfig) else None, valid)


# -- checkpoints -------------------------------------------------------------------------

BASELINE_HEADER = "vie-baseline v1"


def save_baseline(model, path) -> None:
    spec = model.spec if isinstance(model, MlpModel) else BaselineSpec("lasso")
    weights = "none" if spec.class_weights is None else ",".join(repr(float(w)) for w in spec.class_weights)
    lines = [BASELINE_HEADER,
             f"spec kind={spec.kind} alpha={spec.alpha!r} gamma={spec.gamma!r} class_weights={weights}"]
    if isinstance(model, MlpModel):
        arrays = dict(model.params)
    else:
        arrays = {"linear.w": model.w, "linear.b": np.array([model.b])}
    arrays.update({"norm.mean": model.mean, "norm.scale": model.scale})
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        lines.append(f"param {name} {arr.ndim} " + " ".join(str(d) for d in arr.shape))
        lines.append(" ".join(repr(float(a)) for a in arr.ravel()))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_baseline(path):
    from .errors import CheckpointError

    with open(path, encoding="utf-8") as fh:
        lines = fh.read().rstrip("\n").split("\n")
    if lines[0] != BASELINE_HEADER:
        raise CheckpointError(f"unsupported header {lines[0]!r}", line=1)
    if len(lines) < 2 or not lines[1].startswith("spec "):
        raise CheckpointError("missing spec record", line=2)
    try:
        kv = dict(tok.split("=", 1) for tok in lines[1].split()[1:])
        cw = None if kv["class_weights"] == "none" else tuple(float(w) for w in kv["class_weights"].split(","))
        spec = BaselineSpec(kv["kind"], float(kv["alpha"]), float(kv["gamma"]), cw)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"malformed spec: {exc}", line=2) from None
    arrays = {}
    i = 2
    while i < len(lines):
        tok = lines[i].split()
        if len(tok) < 3 or tok[0] != "param":
            raise CheckpointError("expected a param record", line=i + 1)
        dims = tuple(int(d) for d in tok[3:])
        if len(dims) != int(tok[2]) or i + 1 >= len(lines):
            raise CheckpointError(f"param {tok[1]}: bad dims or missing values", line=i + 1)
        vals = lines[i + 1].split()
        if len(vals) != int(np.prod(dims)):
            raise CheckpointError(f"param {tok[1]}: wrong value count", line=i + 2)
        try:
            arrays[tok[1]] = np.array([float(v) for v in vals]).reshape(dims)
        except ValueError:
            raise CheckpointError(f"param {tok[1]}: malformed number", line=i + 2) from None
        i += 2
    try:
        mean, scale = arrays.pop("norm.mean"), arrays.pop("norm.scale")
        if spec.kind == "lasso":
            return LinearModel(arrays["linear.w"], float(arrays["linear.b"][0]), mean, scale)
    except KeyError as exc:
        raise CheckpointError(f"missing array {exc}", line=len(lines)) from None
    return MlpModel(spec, arrays, mean, scale)
