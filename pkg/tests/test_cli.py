import json
import subprocess
import sys

import numpy as np
import pytest

from vie import formats as fm
from vie.cli import main
from vie.trainer import derive_streams, new_model, preset, TrainConfig

from torch_oracle import supervised_cll_trajectory

TINY = ["--hidden", "8", "--bins", "10", "--flow_steps", "2", "--batch_size", "100"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["generate", "--out", str(d), "--n", "1500", "--rate", "0.1", "--seed", "2"]) == 0
    return d


def test_generate_files_and_determinism(data, tmp_path):
    for name in ("train", "valid", "test"):
        assert (data / f"{name}.csv").read_text().startswith("# vie-dataset v1\n")
    assert main(["generate", "--out", str(tmp_path), "--n", "1500", "--rate", "0.1", "--seed", "2"]) == 0
    for name in ("train.csv", "valid.csv", "test.csv", "manifest.txt"):
        assert (tmp_path / name).read_bytes() == (data / name).read_bytes()
    assert (tmp_path / "generate.resolved.cfg").exists()


def test_generate_default_rates(tmp_path):
    assert main(["generate", "--out", str(tmp_path)]) == 0
    sizes = []
    for name in ("train", "valid", "test"):
        ds = fm.read_dataset(tmp_path / f"{name}.csv")
        assert abs(ds.event_rate - 0.01) <= 0.002
        assert ds.oracle_risk is not None
        sizes.append(len(ds))
    assert sizes == [12000, 4000, 4000]


def test_generate_half_rate_and_semisynthetic(tmp_path):
    assert main(["generate", "--out", str(tmp_path / "a"), "--n", "400", "--rate", "0.5"]) == 0
    assert main(["generate", "--out", str(tmp_path / "b"), "--n", "400", "--generator", "semisynth",
                 "--g_kind", "random-mlp"]) == 0
    assert fm.read_dataset(tmp_path / "b" / "train.csv").n_features == 9


def test_train_eval_round(data, tmp_path):
    run = tmp_path / "run"
    assert main(["train", "--data", str(data), "--out", str(run), "--variant", "vie",
                 "--epochs", "1", "--max_iterations", "3", *TINY]) == 0
    for name in ("model.ckpt", "history.csv", "metrics.json", "train.resolved.cfg"):
        assert (run / name).exists()
    assert len(fm.read_history(run / "history.csv")) == 3
    metrics = json.loads((run / "metrics.json").read_text())
    assert metrics["schema"] == "vie-metrics v1" and metrics["split"] == "valid"

    ev1, ev2 = tmp_path / "ev1", tmp_path / "ev2"
    for ev in (ev1, ev2):
        assert main(["eval", "--checkpoint", str(run / "model.ckpt"), "--data", str(data),
                     "--out", str(ev), "--bootstrap", "20", "--hist_bins", "10", "--prior_samples", "2000"]) == 0
    for name in ("metrics.json", "roc.csv", "pr.csv", "latent_hist.csv", "risk_curve.csv"):
        assert (ev1 / name).read_bytes() == (ev2 / name).read_bytes()
    m = json.loads((ev1 / "metrics.json").read_text())
    required = {"schema": str, "split": str, "n": int, "event_rate": float, "auc": float, "auprc": float,
                "bce": float, "positive_bce": float, "oracle_auc": float, "bootstrap_b": int}
    for key, typ in required.items():
        assert isinstance(m[key], typ), key
    for name in ("auc", "auprc", "bce", "positive_bce"):
        assert m[f"{name}_ci_low"] <= m[f"{name}_ci_high"]
    roc = fm.read_series(ev1 / "roc.csv")
    assert abs(np.trapezoid(roc["tpr"], roc["fpr"]) - m["auc"]) < 1e-9
    hist = fm.read_series(ev1 / "latent_hist.csv")
    assert set(hist["kind"]) == {"prior", "posterior"} and len(hist["dim"]) == 4 * 2 * 10
    risk = fm.read_series(ev1 / "risk_curve.csv")
    assert all(0 < r < 1 for r in risk["risk"])


def test_resolved_config_reproduces_run(data, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--data", str(data), "--out", str(a), "--variant", "iaf-gpd",
                 "--epochs", "1", "--max_iterations", "2", *TINY]) == 0
    assert main(["train", "--config", str(a / "train.resolved.cfg"), "--out", str(b)]) == 0
    assert (a / "model.ckpt").read_bytes() == (b / "model.ckpt").read_bytes()


def test_vae_without_penalties_matches_supervised_oracle(data, tmp_path):
    out = tmp_path / "vae"
    assert main(["train", "--data", str(data), "--out", str(out), "--variant", "vae", "--beta", "0",
                 "--lambda", "0", "--epochs", "2", "--batch_size", "100", "--seed", "1",
                 "--encoder_extra_updates", "1"]) == 0
    ours = np.array([r["loss"] for r in fm.read_history(out / "history.csv")])
    train_ds = fm.read_dataset(data / "train.csv")
    cfg = TrainConfig(seed=1, batch_size=100, beta=0.0, lam=0.0, encoder_extra_updates=1)
    init = new_model(preset("vae"), cfg, train_ds.x, train_ds.y).params
    init = {k: v for k, v in init.items() if not k.startswith("critic.")}
    losses, _ = supervised_cll_trajectory(init, train_ds.x, train_ds.y, derive_streams(1), latent_dim=4,
                                          batch_size=100, epochs=2, lr=1e-4, extra=1, clip=10.0)
    assert len(ours) == len(losses)
    assert np.max(np.abs(ours - losses)) < 1e-10


@pytest.mark.parametrize("kind", ["lasso", "focal", "mlp-oversampled"])
def test_baseline_train_and_eval(data, tmp_path, kind):
    run = tmp_path / kind
    assert main(["train", "--data", str(data), "--out", str(run), "--baseline", kind, "--epochs", "2"]) == 0
    assert main(["eval", "--checkpoint", str(run / "model.ckpt"), "--data", str(data / "test.csv"),
                 "--out", str(run / "ev")]) == 0
    assert json.loads((run / "ev" / "metrics.json").read_text())["auc"] > 0.5


def test_usage_errors(data, tmp_path):
    assert main(["train", "--data", str(data), "--out", str(tmp_path), "--variant", "gan"]) == 2
    assert main(["train", "--data", str(data), "--out", str(tmp_path), "--colour", "red"]) == 2
    assert main(["train", "--data", str(data), "--out", str(tmp_path), "--epochs", "many"]) == 2
    assert main(["eval", "--data", str(data)]) == 2
    proc = subprocess.run([sys.executable, "-m", "vie.cli", "train", "--data", str(data), "--out",
                           str(tmp_path), "--variant", "nope"], capture_output=True, text=True)
    assert proc.returncode == 2 and "usage" in proc.stderr


def test_feature_mismatch_exit_3(data, tmp_path):
    run = tmp_path / "run"
    assert main(["train", "--data", str(data), "--out", str(run), "--variant", "vae",
                 "--epochs", "1", "--max_iterations", "1", *TINY]) == 0
    other = tmp_path / "other"
    assert main(["generate", "--out", str(other), "--n", "400", "--rate", "0.1", "--n_features", "6"]) == 0
    assert main(["eval", "--checkpoint", str(run / "model.ckpt"), "--data", str(other),
                 "--out", str(tmp_path / "ev")]) == 3
    assert main(["train", "--data", str(tmp_path / "missing"), "--out", str(run)]) == 3


def test_ablate_table(data, tmp_path):
    out = tmp_path / "abl"
    assert main(["ablate", "--data", str(data), "--out", str(out), "--seeds", "1", "--epochs", "1",
                 "--max_iterations", "2", *TINY]) == 0
    table = fm.read_series(out / "ablation.csv")
    assert table["model"] == ["vae", "vae-gpd", "iaf-gpd", "fenchel-gpd", "vie", "oracle"]
    assert len((out / "ablation.txt").read_text().strip().split("\n")) == 7
