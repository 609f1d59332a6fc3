"""Plain-text file formats: datasets, configs, histories, metrics and series.

Every file starts with a ``# vie-<kind> v1`` line. Floats are written with
``repr`` so they read back bit-exactly.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .datagen import LabeledDataset
from .errors import ContractError

DATASET_HEADER = "# vie-dataset v1"
CONFIG_HEADER = "# vie-config v1"
HISTORY_HEADER = "# vie-history v1"
METRICS_SCHEMA = "vie-metrics v1"
HISTORY_COLUMNS = ("iteration", "epoch", "cll", "kl", "critic_penalty", "critic_loss", "loss", "grad_norm")


def _num(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def write_dataset(ds: LabeledDataset, path) -> None:
    d = ds.n_features
    cols = [f"x{j}" for j in range(d)] + ["y"]
    if ds.oracle_risk is not None:
        cols.append("oracle_risk")
    lines = [DATASET_HEADER, ",".join(cols)]
    for i in range(len(ds)):
        row = [repr(float(v)) for v in ds.x[i]] + [str(int(ds.y[i]))]
        if ds.oracle_risk is not None:
            row.append(repr(float(ds.oracle_risk[i])))
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_dataset(path) -> LabeledDataset:
    text = Path(path).read_text(encoding="utf-8")
    rows = [ln for ln in text.split("\n") if ln and not ln.startswith("#")]
    if not rows:
        raise ContractError(f"{path}: no header row")
    header = rows[0].split(",")
    xcols = [i for i, c in enumerate(header) if c.startswith("x")]
    if "y" not in header or not xcols:
        raise ContractError(f"{path}: header needs x0.. feature columns and y")
    expected = [f"x{j}" for j in range(len(xcols))]
    if [header[i] for i in xcols] != expected:
        raise ContractError(f"{path}: feature columns must be x0..x{len(xcols) - 1} in order")
    yi = header.index("y")
    oi = header.index("oracle_risk") if "oracle_risk" in header else None
    try:
        table = np.array([[float(v) for v in r.split(",")] for r in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise ContractError(f"{path}: malformed number ({exc})") from None
    if table.size == 0:
        raise ContractError(f"{path}: no data rows")
    if table.ndim != 2 or table.shape[1] != len(header):
        raise ContractError(f"{path}: rows do not match the header width")
    y = table[:, yi]
    if np.any(y != np.round(y)):
        raise ContractError(f"{path}: labels must be integers")
    return LabeledDataset(table[:, xcols], y.astype(np.int64),
                          None if oi is None else table[:, oi])


def write_config(values: Mapping, path) -> None:
    lines = [CONFIG_HEADER] + [f"{k} = {_cfg_value(v)}" for k, v in sorted(values.items())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _cfg_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_config(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment. Values stay strings."""
    out = {}
    for n, raw in enumerate(Path(path).read_text(encoding="utf-8").split("\n"), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"{path}:{n}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise ContractError(f"{path}:{n}: empty key")
        out[k.replace("-", "_")] = v
    return out


def write_history(history: Iterable[Mapping], path) -> None:
    lines = [HISTORY_HEADER, ",".join(HISTORY_COLUMNS)]
    for rec in history:
        lines.append(",".join(_num(rec.get(c)) for c in HISTORY_COLUMNS))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_history(path) -> list[dict]:
    rows = [ln for ln in Path(path).read_text(encoding="utf-8").split("\n") if ln and not ln.startswith("#")]
    cols = rows[0].split(",")
    out = []
    for r in rows[1:]:
        out.append({c: (float(v) if v else None) for c, v in zip(cols, r.split(","))})
    return out


def write_metrics(metrics: Mapping, path) -> None:
    body = {"schema": METRICS_SCHEMA}
    for k, v in metrics.items():
        if isinstance(v, float) and not math.isfinite(v):
            v = None
        body[k] = v
    Path(path).write_text(json.dumps(body, indent=2, sort_keys=False) + "\n", encoding="utf-8")


def write_series(path, kind: str, columns: Mapping[str, Iterable]) -> None:
    """Column-oriented CSV with a ``# vie-series <kind> v1`` first line."""
    names = list(columns)
    data = [list(columns[c]) for c in names]
    if len({len(d) for d in data}) > 1:
        raise ContractError("series columns differ in length")
    lines = [f"# vie-series {kind} v1", ",".join(names)]
    for row in zip(*data):
        lines.append(",".join(v if isinstance(v, str) else _num(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_series(path) -> dict[str, list]:
    rows = [ln for ln in Path(path).read_text(encoding="utf-8").split("\n") if ln and not ln.startswith("#")]
    cols = rows[0].split(",")
    out: dict[str, list] = {c: [] for c in cols}
    for r in rows[1:]:
        for c, v in zip(cols, r.split(",")):
            try:
                out[c].append(float(v))
            except ValueError:
                out[c].append(v)
    return out
