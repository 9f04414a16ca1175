"""Flat ``key = value`` experiment configuration with namespaced keys."""

from __future__ import annotations

import os
from pathlib import Path

from glyco.errors import ConfigurationError

OUT_DIR_ENV = "GLYCO_OUT_DIR"

DEFAULTS: dict[str, object] = {
    "experiment.name": "experiment",
    "experiment.kind": "single",  # single | ablation | baseline | gamma_sweep
    "experiment.gammas": [0.2, 0.4, 0.8],
    "output.dir": "runs",
    "data.source": "synthetic",  # synthetic | csv
    "data.n_patients": 60,
    "data.windows_per_patient": 1,
    "data.seed": 0,
    "data.cgm_csv": "",
    "data.smbg_csv": "",
    "sampling.strategy": "hybrid",
    "sampling.rate": 0.028,
    "sampling.gamma_h": 0.4,
    "sampling.k_per_day": 5,
    "sampling.delta": 12,
    "sampling.seed": 0,
    "selector.params": "",
    "selector.n_patients": 20,
    "selector.epochs": 60,
    "selector.lr": 3e-3,
    "selector.blocks": 3,
    "selector.hidden": 32,
    "selector.seed": 0,
    "model.sca.channels": 32,
    "model.sca.reduction_c": 4,
    "model.sca.reduction_s": 4,
    "model.sca.blocks": 2,
    "model.resnet.channels": [16, 32, 64, 128],
    "model.resnet.aspp_dilations": [6, 12, 18],
    "model.resnet.aspp_channels": 32,
    "model.t_pool": 3,
    "loss.lambda_rc": 1.0,
    "loss.lambda_tr": 1.0,
    "loss.lambda_a": 0.5,
    "loss.temperature": 5.0,
    "train.epochs": 40,
    "train.batch_size": 8,
    "train.lr": 1e-3,
    "train.seed": 0,
    "train.mode": "full",
}


def _coerce(raw: str, like: object, key: str):
    raw = raw.strip()
    try:
        if isinstance(like, list):
            if not raw:
                return []
            kind = type(like[0]) if like else float
            return [kind(v.strip()) for v in raw.split(",")]
        if isinstance(like, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"{key}: cannot parse {raw!r} as {type(like).__name__}") from None
    return raw


def parse_config(text: str, base: dict | None = None) -> dict:
    """Parse ``key = value`` lines (``#`` comments) on top of the defaults."""
    cfg = dict(DEFAULTS if base is None else base)
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {no}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigurationError(f"line {no}: unknown key {key!r}")
        cfg[key] = _coerce(value, DEFAULTS[key], key)
    return cfg


def load_config(path=None, overrides: list[str] | None = None) -> dict:
    text = Path(path).read_text() if path else ""
    cfg = parse_config(text)
    if overrides:
        cfg = parse_config("\n".join(overrides), cfg)
    return cfg


def dump_config(cfg: dict) -> str:
    def fmt(v):
        return ",".join(str(x) for x in v) if isinstance(v, list) else str(v)

    return "".join(f"{k} = {fmt(cfg[k])}\n" for k in sorted(cfg))


def output_root(cfg: dict) -> Path:
    return Path(os.environ.get(OUT_DIR_ENV) or cfg["output.dir"])
