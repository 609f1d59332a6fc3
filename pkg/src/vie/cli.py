"""Command-line entry point: ``vie {generate,train,eval,ablate}``.

Settings come from an optional ``--config`` file of ``key = value`` lines,
overridden by ``--key value`` arguments. Unknown keys are rejected. Each
command writes ``<command>.resolved.cfg`` next to its outputs; passing that
file back with ``--config`` reproduces the run.

Exit codes: 0 success, 2 usage or config error, 3 data/model mismatch,
4 numeric failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import baselines as bl
from . import datagen as dg
from . import formats as fm
from . import metrics as mt
from . import trainer as tr
from .amnn import cll_probability
from .errors import CheckpointError, ContractError, DomainError, NumericError, TrainingError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _opt_float(s: str):
    return None if s.lower() == "none" else float(s)


def _opt_str(s: str):
    return None if s.lower() == "none" else s


_GEN_KEYS = {
    "generator": (str, "longtail"),
    "n": (int, 20000),
    "rate": (float, 0.01),
    "seed": (int, 0),
    "split_seed": (int, 0),
    "latent_dim": (int, 4),
    "n_features": (int, 10),
    "xi": (float, 0.3),
    "sigma": (float, 0.5),
    "risk_scale": (float, dg.LongTailConfig.risk_scale),
    "weibull_lam": (float, 1.0),
    "weibull_nu": (float, 2.0),
    "g_kind": (str, "linear"),
    "generator_seed": (int, 12345),
}

_TRAIN_KEYS = {
    f.name: ((lambda s, _n=f.name: tr.parse_field(tr.TrainConfig, _n, s)), f.default)
    for f in dataclasses.fields(tr.TrainConfig)
}

_BASELINE_KEYS = {
    "baseline": (_opt_str, None),
    "alpha": (float, 0.01),
    "gamma": (float, 2.0),
    "mlp_lr": (float, 1e-3),
}

KEYS = {
    "generate": {"out": (str, None), **_GEN_KEYS},
    "train": {"data": (str, None), "out": (str, None), "variant": (_opt_str, "vie"),
              **_TRAIN_KEYS, **_BASELINE_KEYS},
    "eval": {"checkpoint": (str, None), "data": (str, None), "out": (str, None),
             "bootstrap": (int, 0), "seed": (int, 0), "draws": (int, 32), "hist_bins": (int, 40),
             "prior_samples": (int, 20000)},
    "ablate": {"data": (_opt_str, None), "out": (str, None), "seeds": (int, 3),
               "variants": (str, ",".join(tr.PRESETS)), "draws": (int, 32), **_GEN_KEYS,
               **{k: v for k, v in _TRAIN_KEYS.items() if k != "seed"}},
}
ALIASES = {"lambda": "lam"}
REQUIRED = {"generate": ("out",), "train": ("data", "out"), "eval": ("checkpoint", "data", "out"),
            "ablate": ("out",)}


def resolve(command: str, file_values: dict, overrides: dict) -> dict:
    spec = KEYS[command]
    merged = {**file_values, **overrides}
    out = {k: default for k, (_, default) in spec.items()}
    for raw_key, text in merged.items():
        key = ALIASES.get(raw_key.replace("-", "_"), raw_key.replace("-", "_"))
        if key not in spec:
            raise UsageError(f"unknown setting {raw_key!r} for '{command}'")
        try:
            out[key] = spec[key][0](text)
        except (ValueError, KeyError) as exc:
            raise UsageError(f"bad value for {key}: {exc}") from None
    for key in REQUIRED[command]:
        if out.get(key) is None:
            raise UsageError(f"'{command}' needs --{key}")
    return out


def _parse_overrides(tokens: list[str]) -> dict:
    out = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise UsageError(f"--{key} needs a value")
            val = tokens[i + 1]
            i += 2
        out[key] = val
    return out


def _train_config(cfg: dict, **extra) -> tr.TrainConfig:
    values = {f.name: cfg[f.name] for f in dataclasses.fields(tr.TrainConfig) if f.name in cfg}
    values.update(extra)
    return tr.TrainConfig(**values)


def _outdir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from None
    return out


# -- generate -----------------------------------------------------------------------

def _generate(cfg: dict):
    if cfg["generator"] == "longtail":
        c = dg.LongTailConfig(n=cfg["n"], latent_dim=cfg["latent_dim"], n_features=cfg["n_features"],
                              xi=cfg["xi"], sigma=cfg["sigma"], risk_scale=cfg["risk_scale"],
                              lam=cfg["weibull_lam"], nu=cfg["weibull_nu"], rate=cfg["rate"],
                              seed=cfg["seed"], generator_seed=cfg["generator_seed"])
        ds = dg.gen_longtailed(c)
    elif cfg["generator"] == "semisynth":
        c = dg.SemiSynthConfig(n=cfg["n"], g_kind=cfg["g_kind"], lam=cfg["weibull_lam"],
                               nu=cfg["weibull_nu"], rate=cfg["rate"], seed=cfg["seed"])
        ds = dg.gen_semisynthetic(c)
    else:
        raise UsageError(f"generator must be 'longtail' or 'semisynth', got {cfg['generator']!r}")
    return ds, dg.stratified_split(ds, seed=cfg["split_seed"])


def cmd_generate(cfg: dict) -> int:
    out = _outdir(cfg["out"])
    ds, splits = _generate(cfg)
    manifest = {"seed": cfg["seed"], "split_seed": cfg["split_seed"], "t0": ds.t0,
                "event_rate": ds.event_rate, "n": len(ds)}
    for part in splits:
        fm.write_dataset(part, out / f"{part.split}.csv")
        manifest[f"{part.split}_n"] = len(part)
        manifest[f"{part.split}_event_rate"] = part.event_rate
    fm.write_config(manifest, out / "manifest.txt")
    fm.write_config(cfg, out / "generate.resolved.cfg")
    print(f"wrote {out}/train.csv, valid.csv, test.csv (event rate {ds.event_rate:.4f}, t0 {ds.t0:.6g})")
    return EXIT_OK


# -- train ----------------------------------------------------------------------------------

def _load_split(data: str, name: str) -> dg.LabeledDataset:
    path = Path(data) / f"{name}.csv"
    if not path.exists():
        raise DataError(f"missing dataset file {path}")
    try:
        return fm.read_dataset(path)
    except ContractError as exc:
        raise DataError(str(exc)) from None


def _eval_metrics(scores, y) -> dict:
    out = {"n": int(len(y)), "event_rate": float(np.mean(y))}
    for name, fn in mt.METRICS.items():
        try:
            out[name] = fn(scores, y)
        except ContractError:
            out[name] = None
    return out


def cmd_train(cfg: dict) -> int:
    out = _outdir(cfg["out"])
    train_ds = _load_split(cfg["data"], "train")
    valid_path = Path(cfg["data"]) / "valid.csv"
    valid = _load_split(cfg["data"], "valid") if valid_path.exists() else None
    if valid is not None and valid.n_features != train_ds.n_features:
        raise DataError("train and valid splits have different feature counts")
    if cfg["baseline"] is not None:
        kind = cfg["baseline"]
        if kind not in bl.KINDS:
            raise UsageError(f"unknown baseline {kind!r}; choose from {bl.KINDS}")
        spec = bl.BaselineSpec(kind, alpha=cfg["alpha"], gamma=cfg["gamma"] if kind == "focal" else 0.0)
        mcfg = bl.MlpConfig(epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr=cfg["mlp_lr"],
                            seed=cfg["seed"], patience=cfg["patience"], max_iterations=cfg["max_iterations"])
        model = bl.train_baseline(train_ds, spec, mcfg, valid)
        bl.save_baseline(model, out / "model.ckpt")
        hist = [{"iteration": i, "loss": v} for i, v in enumerate(model.history)]
        scores = model.predict(valid.x) if valid is not None else None
    else:
        if cfg["variant"] is None or cfg["variant"].lower() not in tr.PRESETS:
            raise UsageError(f"unknown variant {cfg['variant']!r}; choose from {sorted(tr.PRESETS)}")
        model = tr.train(train_ds, tr.preset(cfg["variant"]), _train_config(cfg), valid)
        tr.checkpoint_save(model, out / "model.ckpt")
        hist = model.history
        scores = tr.predict(model, valid.x, seed=cfg["seed"], n_draws=cfg["val_draws"]) if valid is not None else None
    fm.write_history(hist, out / "history.csv")
    metrics = {"split": "valid"}
    if scores is not None:
        metrics.update(_eval_metrics(scores, valid.y))
    fm.write_metrics(metrics, out / "metrics.json")
    fm.write_config(cfg, out / "train.resolved.cfg")
    print(f"wrote {out}/model.ckpt, history.csv, metrics.json")
    return EXIT_OK


# -- eval -------------------------------------------------------------------------------------

def _load_any(path):
    p = Path(path)
    if not p.exists():
        raise DataError(f"missing checkpoint {p}")
    first = p.read_text(encoding="utf-8").split("\n", 1)[0].strip()
    try:
        if first == bl.BASELINE_HEADER:
            return bl.load_baseline(p)
        return tr.checkpoint_load(p)
    except CheckpointError as exc:
        raise DataError(f"{p}: {exc}") from None


def latent_series(model: tr.TrainedModel, x, seed: int, bins: int, prior_samples: int):
    """Per-dimension prior/posterior histograms and the risk curve along each axis."""
    rng = np.random.default_rng(seed)
    noise = model.parts.encoder.draw_noise(rng, len(x))
    post = ad.value_of(tr.posterior_sample(model, model.params, model.standardize(x), noise)[0])
    prior = tr.sample_prior(model, prior_samples, rng)
    hist = {"dim": [], "kind": [], "bin_left": [], "bin_right": [], "density": []}
    risk = {"dim": [], "z": [], "risk": []}
    p = post.shape[1]
    for j in range(p):
        lo = float(min(np.percentile(prior[:, j], 0.1), post[:, j].min()))
        hi = float(max(np.percentile(prior[:, j], 99.9), post[:, j].max()))
        edges = np.linspace(lo, hi, bins + 1)
        for kind, sample in (("prior", prior[:, j]), ("posterior", post[:, j])):
            dens, _ = np.histogram(sample, bins=edges, density=True)
            hist["dim"] += [j] * bins
            hist["kind"] += [kind] * bins
            hist["bin_left"] += list(edges[:-1])
            hist["bin_right"] += list(edges[1:])
            hist["density"] += list(dens)
        grid = np.linspace(lo, hi, 101)
        z = np.zeros((grid.size, p))
        z[:, j] = grid
        H = model.parts.decoder.forward(model.params, z, model.config.eval_integration)
        risk["dim"] += [j] * grid.size
        risk["z"] += list(grid)
        risk["risk"] += list(cll_probability(np.asarray(H.value)))
    return hist, risk


def cmd_eval(cfg: dict) -> int:
    out = _outdir(cfg["out"])
    model = _load_any(cfg["checkpoint"])
    data = Path(cfg["data"])
    if data.is_dir():
        data = data / "test.csv"
    if not data.exists():
        raise DataError(f"missing dataset file {data}")
    try:
        ds = fm.read_dataset(data)
    except ContractError as exc:
        raise DataError(str(exc)) from None
    in_dim = model.in_dim if isinstance(model, tr.TrainedModel) else len(model.mean)
    if ds.n_features != in_dim:
        raise DataError(f"checkpoint expects {in_dim} features, data has {ds.n_features}")
    if isinstance(model, tr.TrainedModel):
        scores = tr.predict(model, ds.x, seed=cfg["seed"], n_draws=cfg["draws"])
    else:
        scores = model.predict(ds.x)
    metrics = {"split": data.stem, **_eval_metrics(scores, ds.y)}
    if cfg["bootstrap"] > 0:
        for name in mt.METRICS:
            if metrics.get(name) is None:
                continue
            rep = mt.bootstrap(name, scores, ds.y, cfg["bootstrap"], cfg["seed"])
            metrics[f"{name}_ci_low"] = rep.ci_low
            metrics[f"{name}_ci_high"] = rep.ci_high
            metrics[f"{name}_boot_mean"] = rep.boot_mean
            metrics[f"{name}_boot_std"] = rep.boot_std
        metrics["bootstrap_b"] = cfg["bootstrap"]
    if ds.oracle_risk is not None and metrics.get("auc") is not None:
        metrics["oracle_auc"] = mt.roc_auc(ds.oracle_risk, ds.y)
        metrics["oracle_auprc"] = mt.auprc(ds.oracle_risk, ds.y)
    fm.write_metrics(metrics, out / "metrics.json")
    if metrics.get("auc") is not None:
        fpr, tpr = mt.roc_curve(scores, ds.y)
        fm.write_series(out / "roc.csv", "roc", {"fpr": fpr, "tpr": tpr})
        rec, prec = mt.pr_curve(scores, ds.y)
        fm.write_series(out / "pr.csv", "pr", {"recall": rec, "precision": prec})
    if isinstance(model, tr.TrainedModel):
        hist, risk = latent_series(model, ds.x, cfg["seed"], cfg["hist_bins"], cfg["prior_samples"])
        fm.write_series(out / "latent_hist.csv", "latent-hist", hist)
        fm.write_series(out / "risk_curve.csv", "risk-curve", risk)
    fm.write_config(cfg, out / "eval.resolved.cfg")
    print(f"wrote {out}/metrics.json (auc {metrics.get('auc')})")
    return EXIT_OK


# -- ablate -------------------------------------------------------------------------------------

def run_ablation(train_ds, valid, test, variants, seeds: int, base: tr.TrainConfig, log=None,
                 draws: int = 32) -> list[dict]:
    """Rows of mean/std AUC and AUPRC on ``test`` per variant, plus the oracle row.

    Test scores average ``draws`` posterior samples per row.
    """
    rows = []
    for name in variants:
        aucs, aps = [], []
        for s in range(seeds):
            model = tr.train(train_ds, tr.preset(name), dataclasses.replace(base, seed=s), valid)
            scores = tr.predict(model, test.x, seed=s, n_draws=draws)
            aucs.append(mt.roc_auc(scores, test.y))
            aps.append(mt.auprc(scores, test.y))
            if log:
                log(f"{name} seed {s}: auc {aucs[-1]:.4f} auprc {aps[-1]:.4f}")
        rows.append({"model": name, "auc_mean": float(np.mean(aucs)), "auc_std": float(np.std(aucs)),
                     "auprc_mean": float(np.mean(aps)), "auprc_std": float(np.std(aps)),
                     "seeds": seeds, "aucs": aucs})
    if test.oracle_risk is not None:
        rows.append({"model": "oracle", "auc_mean": mt.roc_auc(test.oracle_risk, test.y), "auc_std": 0.0,
                     "auprc_mean": mt.auprc(test.oracle_risk, test.y), "auprc_std": 0.0,
                     "seeds": 0, "aucs": []})
    return rows


def format_table(rows) -> str:
    lines = [f"{'model':<12} {'AUC':>16} {'AUPRC':>16}"]
    for r in rows:
        lines.append(f"{r['model']:<12} {r['auc_mean']:.3f} ({r['auc_std']:.3f})".ljust(30)
                     + f" {r['auprc_mean']:.3f} ({r['auprc_std']:.3f})")
    return "\n".join(lines)


def cmd_ablate(cfg: dict) -> int:
    out = _outdir(cfg["out"])
    if cfg["data"] is not None:
        train_ds = _load_split(cfg["data"], "train")
        valid = _load_split(cfg["data"], "valid")
        test = _load_split(cfg["data"], "test")
    else:
        _, (train_ds, valid, test) = _generate(cfg)
    variants = [v.strip().lower() for v in cfg["variants"].split(",") if v.strip()]
    for v in variants:
        if v not in tr.PRESETS:
            raise UsageError(f"unknown variant {v!r}")
    base = _train_config(cfg, seed=0)
    rows = run_ablation(train_ds, valid, test, variants, cfg["seeds"], base,
                        log=lambda m: print(m, file=sys.stderr, flush=True), draws=cfg["draws"])
    fm.write_series(out / "ablation.csv", "ablation",
                    {k: [r[k] for r in rows] for k in ("model", "auc_mean", "auc_std", "auprc_mean",
                                                      "auprc_std", "seeds")})
    (out / "ablation.txt").write_text(format_table(rows) + "\n", encoding="utf-8")
    fm.write_config(cfg, out / "ablate.resolved.cfg")
    print(format_table(rows))
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="vie", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"{name} (settings: {', '.join(sorted(KEYS[name]))})")
        p.add_argument("--config", help="key = value settings file")
    args, rest = parser.parse_known_args(argv)
    try:
        file_values = fm.read_config(args.config) if args.config else {}
        cfg = resolve(args.command, file_values, _parse_overrides(rest))
        return COMMANDS[args.command](cfg)
    except (UsageError, ContractError, FileNotFoundError) as exc:
        if isinstance(exc, FileNotFoundError) and args.command != "generate":
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_DATA
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, NumericError, DomainError, FloatingPointError) as exc:
        comp = getattr(exc, "component", None)
        print(f"error: numeric failure{f' in {comp}' if comp else ''}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
