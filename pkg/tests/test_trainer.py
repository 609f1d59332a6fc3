import numpy as np
import pytest
from scipy.special import ndtr

from vie import autodiff as ad
from vie.datagen import LabeledDataset, LongTailConfig, gen_longtailed, stratified_split
from vie.errors import CheckpointError, ContractError
from vie.evt import mixed_cdf
from vie.trainer import (PRESETS, TrainConfig, VariantSpec, checkpoint_load, checkpoint_save,
                         derive_streams, event_rate_weights, make_optimizers, new_model, predict,
                         train, train_step)

from torch_oracle import supervised_cll_trajectory

SMALL = dict(hidden=8, bins=10, flow_steps=2, batch_size=50)


def _toy(n=300, d=5, seed=0, rate=0.2):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    logit = x @ rng.normal(size=d) + np.log(rate / (1 - rate))
    y = (rng.uniform(size=n) < 1 / (1 + np.exp(-logit))).astype(int)
    return LabeledDataset(x, y)


DEGENERATE = VariantSpec("gaussian", "gaussian", "mlp", False)


def test_degenerates_to_supervised_cll_training():
    ds = _toy(400)
    cfg = TrainConfig(seed=3, epochs=3, batch_size=100, beta=0.0, lam=0.0, grad_clip_norm=0.5,
                      encoder_extra_updates=2, lr=1e-2)
    model = train(ds, DEGENERATE, cfg)
    init = new_model(DEGENERATE, cfg, ds.x, ds.y).params
    streams = derive_streams(cfg.seed)
    losses, final = supervised_cll_trajectory(
        init, ds.x, ds.y, streams, latent_dim=4, batch_size=100, epochs=3, lr=1e-2, extra=2, clip=0.5)
    ours = np.array([h["loss"] for h in model.history])
    assert len(ours) == len(losses) == 12
    assert np.max(np.abs(ours - losses)) < 1e-10
    for k, v in final.items():
        assert np.max(np.abs(model.params[k] - v)) < 1e-10


@pytest.mark.parametrize("r", [0, 1, 5])
def test_extra_updates_are_counted(r):
    ds = _toy(40)
    cfg = TrainConfig(encoder_extra_updates=r, **SMALL)
    model = new_model(PRESETS["vie"], cfg, ds.x, ds.y)
    opts = make_optimizers(cfg)
    train_step(model, model.standardize(ds.x[:8]), ds.y[:8], derive_streams(0), opts)
    assert model.counters["encoder_updates"] == r + 1
    assert opts.main.steps["enc.base.0.W"] == r + 1
    assert opts.main.steps["dec.alpha"] == 1
    assert opts.main.steps["prior.raw_xi"] == 1
    assert model.counters["critic_updates"] == 1


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_every_preset_runs_a_step(name):
    ds = _toy(40, seed=1)
    cfg = TrainConfig(**SMALL)
    model = new_model(PRESETS[name], cfg, ds.x, ds.y)
    x, y = model.standardize(ds.x[:4]), np.array([0, 1, 0, 1])
    out = train_step(model, x, y, derive_streams(1), make_optimizers(cfg))
    assert all(np.isfinite(v) for v in out.values())
    assert "cll" in out and "loss" in out
    assert ("kl" in out) == (PRESETS[name].encoder != "implicit")
    assert ("critic_loss" in out) == PRESETS[name].prior_match
    assert all(np.all(np.isfinite(v)) for v in model.params.values())


def test_implicit_without_matching_rejected():
    with pytest.raises(ContractError):
        VariantSpec("mixed-gpd", "implicit", "amnn", False)


def test_same_seed_bit_identical():
    ds = _toy(200)
    cfg = TrainConfig(epochs=2, seed=7, **SMALL)
    a, b = train(ds, "vie", cfg), train(ds, "vie", cfg)
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])
    assert a.history == b.history


def test_single_class_rejected():
    ds = _toy(50)
    with pytest.raises(ContractError, match="positive"):
        train(LabeledDataset(ds.x, np.zeros(50, dtype=int)), "vie", TrainConfig(epochs=1, **SMALL))


def test_event_rate_rule():
    assert event_rate_weights(0.01) == (1e-3, 1e-5)
    assert event_rate_weights(0.0096) == (1e-3, 1e-5)
    assert event_rate_weights(0.009) == (1e-4, 1e-6)
    assert event_rate_weights(0.2) == (1e-3, 1e-5)


@pytest.fixture(scope="module")
def fitted():
    ds = _toy(300)
    return ds, train(ds, "vie", TrainConfig(epochs=1, **SMALL))


def test_predict_properties(fitted):
    ds, model = fitted
    r = predict(model, ds.x, seed=4)
    assert np.all((r > 0) & (r < 1))
    assert np.array_equal(r, predict(model, ds.x, seed=4))
    with pytest.raises(ContractError):
        predict(model, ds.x[:, :3])


def test_more_draws_reduce_variance(fitted):
    ds, model = fitted
    one = np.array([predict(model, ds.x[:50], seed=s) for s in range(20)])
    many = np.array([predict(model, ds.x[:50], seed=s, n_draws=64) for s in range(20)])
    assert many.var(axis=0).mean() < one.var(axis=0).mean()


def test_checkpoint_round_trip(fitted, tmp_path):
    ds, model = fitted
    path = tmp_path / "m.ckpt"
    checkpoint_save(model, path)
    back = checkpoint_load(path)
    assert back.variant == model.variant and back.config == model.config
    assert set(back.params) == set(model.params)
    for k in model.params:
        assert np.array_equal(back.params[k], model.params[k])
    assert np.array_equal(back.x_mean, model.x_mean) and np.array_equal(back.x_scale, model.x_scale)
    assert (back.lam, back.beta) == (model.lam, model.beta)
    assert np.array_equal(predict(back, ds.x, seed=1), predict(model, ds.x, seed=1))


def test_checkpoint_defects(fitted, tmp_path):
    _, model = fitted
    path = tmp_path / "m.ckpt"
    checkpoint_save(model, path)
    lines = path.read_text().split("\n")
    cut = tmp_path / "cut.ckpt"
    cut.write_text("\n".join(lines[: len(lines) // 2]) + "\n")
    with pytest.raises(CheckpointError):
        checkpoint_load(cut)
    bad = tmp_path / "bad.ckpt"
    bad.write_text("\n".join(["vie-checkpoint v9"] + lines[1:]))
    with pytest.raises(CheckpointError, match="line 1"):
        checkpoint_load(bad)


def test_checkpoint_accepts_hex_floats(fitted, tmp_path):
    _, model = fitted
    path = tmp_path / "m.ckpt"
    checkpoint_save(model, path)
    lines = path.read_text().split("\n")
    i = next(j for j, ln in enumerate(lines) if ln.startswith("param enc.")) + 1
    vals = [float(v) for v in lines[i].split()]
    lines[i] = " ".join(v.hex() for v in vals)
    path.write_text("\n".join(lines))
    back = checkpoint_load(path)
    name = lines[i - 1].split()[1]
    assert np.array_equal(back.params[name].ravel(), vals)


def test_gpd_prior_tail_is_heavier_than_normal():
    ds = gen_longtailed(LongTailConfig(n=2000, seed=1))
    train_set, _, _ = stratified_split(ds, seed=1)
    model = train(train_set, "vie", TrainConfig(epochs=1, max_iterations=5, **SMALL))
    prior = model.prior_params
    assert np.all(prior.xi >= 0)
    t = model.config.threshold + 1.0
    survival = 1 - mixed_cdf(prior, np.full(4, t))
    assert np.all(survival > 1 - ndtr(t))
