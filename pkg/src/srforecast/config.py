"""Declarative run configuration (TOML) with strict validation."""
from __future__ import annotations

import copy
import os
from pathlib import Path

import tomli

from .simulators import PRESETS

OUTPUT_DIR_ENV = "SRFORECAST_OUTPUT_DIR"

METHODS = ("energy", "kernel", "variogram", "energy-variogram", "kernel-variogram", "gan")

DEFAULTS: dict = {
    "output_dir": "runs",
    "seed": 0,
    "data": {
        "preset": "lorenz63-paper",
        "input": "",
        "duration": 0.0,  # 0 keeps the preset's duration
        "split": [0.6, 0.2, 0.2],
        "k": 10,
        "lead": 1,
        "normalize": True,
    },
    "method": {
        "name": "energy",
        "beta": 1.0,
        "gamma": "auto",  # median pairwise distance of validation targets
        "p": 1.0,
        "variogram_weights": "cyclic",  # cyclic | ones
        "variogram_estimator": "unbiased",  # unbiased | plugin
        # (strictly proper rule, variogram) weights, or "balanced": each term scaled
        # to unit range between a climatological ensemble and a perfect forecast
        "sum_weights": "balanced",
    },
    "model": {
        "hidden": [],  # empty: 5 x 50 for scalar series, 5 x 128 otherwise
        "latent_dim": "auto",  # auto: same as the series dimension
        "disc_hidden": [],  # empty: 3 layers of the generator width
    },
    "train": {
        "m": 10,
        "batch_size": 1000,
        "epochs": 1000,
        "lr": 1e-3,
        "lr_disc": 1e-3,
        "optimizer": "adam",
        "patience": 20,
        "sweep": False,
        "lr_grid": [1e-2, 3e-3, 1e-3, 3e-4, 1e-4],
        "lr_disc_grid": [1e-2, 3e-3, 1e-3, 3e-4, 1e-4],
        "disc_updates": 1,
        "gan_val_m": 100,
        "jobs": 1,
    },
    "eval": {
        "m_eval": 200,
        "interval": 0.99,
    },
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{where}' must be a section")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the TOML file at ``path``, then ``overrides``; validated."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path, "rb") as fh:
                cfg = _merge(cfg, tomli.load(fh))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    if overrides:
        cfg = _merge(cfg, overrides)
    env_dir = os.environ.get(OUTPUT_DIR_ENV)
    if env_dir:
        cfg["output_dir"] = env_dir
    validate(cfg)
    return cfg


def _num(cfg, section, key, lo=None, integer=False, strict_lo=False):
    v = cfg[section][key] if section else cfg[key]
    name = f"{section}.{key}" if section else key
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and not isinstance(v, int)):
        raise ConfigError(f"'{name}' must be {'an integer' if integer else 'a number'}, got {v!r}")
    if lo is not None and (v <= lo if strict_lo else v < lo):
        raise ConfigError(f"'{name}' must be {'>' if strict_lo else '>='} {lo}, got {v}")
    return v


def _num_list(v, name, positive=True):
    if not isinstance(v, list) or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in v):
        raise ConfigError(f"'{name}' must be a list of numbers")
    if positive and any(x <= 0 for x in v):
        raise ConfigError(f"'{name}' entries must be > 0")
    return v


def validate(cfg: dict) -> None:
    data, method, model, train = cfg["data"], cfg["method"], cfg["model"], cfg["train"]
    _num(cfg, None, "seed", 0, integer=True)
    if not isinstance(cfg["output_dir"], str) or not cfg["output_dir"]:
        raise ConfigError("'output_dir' must be a non-empty path")

    if data["input"]:
        if not Path(data["input"]).is_file():
            raise ConfigError(f"'data.input' file not found: {data['input']}")
    elif data["preset"] not in PRESETS:
        raise ConfigError(f"'data.preset' must be one of {sorted(PRESETS)}, got {data['preset']!r}")
    _num(cfg, "data", "duration", 0.0)
    split = _num_list(data["split"], "data.split")
    if len(split) != 3 or abs(sum(split) - 1.0) > 1e-9:
        raise ConfigError(f"'data.split' must be three positive fractions summing to 1, got {split}")
    _num(cfg, "data", "k", 1, integer=True)
    _num(cfg, "data", "lead", 1, integer=True)
    if not isinstance(data["normalize"], bool):
        raise ConfigError("'data.normalize' must be true or false")

    if method["name"] not in METHODS:
        raise ConfigError(f"'method.name' must be one of {METHODS}, got {method['name']!r}")
    beta = _num(cfg, "method", "beta")
    if not 0 < beta < 2:
        raise ConfigError(f"'method.beta' must lie in (0, 2), got {beta}")
    if method["gamma"] != "auto":
        _num(cfg, "method", "gamma", 0.0, strict_lo=True)
    _num(cfg, "method", "p", 0.0, strict_lo=True)
    if method["variogram_weights"] not in ("cyclic", "ones"):
        raise ConfigError("'method.variogram_weights' must be 'cyclic' or 'ones'")
    if method["variogram_estimator"] not in ("unbiased", "plugin"):
        raise ConfigError("'method.variogram_estimator' must be 'unbiased' or 'plugin'")
    if method["sum_weights"] != "balanced" and len(_num_list(method["sum_weights"], "method.sum_weights")) != 2:
        raise ConfigError("'method.sum_weights' needs exactly two weights or \"balanced\"")

    hidden = model["hidden"]
    if not isinstance(hidden, list) or any(not isinstance(h, int) or isinstance(h, bool) or h < 1 for h in hidden):
        raise ConfigError("'model.hidden' must be a list of positive integers")
    dh = model["disc_hidden"]
    if not isinstance(dh, list) or any(not isinstance(h, int) or isinstance(h, bool) or h < 1 for h in dh):
        raise ConfigError("'model.disc_hidden' must be a list of positive integers")
    if model["latent_dim"] != "auto":
        _num(cfg, "model", "latent_dim", 0, integer=True)

    m = _num(cfg, "train", "m", 1, integer=True)
    if method["name"] != "gan" and m < 2:
        raise ConfigError("'train.m' must be >= 2 for scoring-rule training")
    _num(cfg, "train", "batch_size", 1, integer=True)
    _num(cfg, "train", "epochs", 1, integer=True)
    _num(cfg, "train", "lr", 0.0)
    _num(cfg, "train", "lr_disc", 0.0)
    if train["optimizer"] not in ("adam", "sgd"):
        raise ConfigError("'train.optimizer' must be 'adam' or 'sgd'")
    _num(cfg, "train", "patience", 1, integer=True)
    if not isinstance(train["sweep"], bool):
        raise ConfigError("'train.sweep' must be true or false")
    if not _num_list(train["lr_grid"], "train.lr_grid") or not _num_list(train["lr_disc_grid"], "train.lr_disc_grid"):
        raise ConfigError("learning-rate grids must be nonempty")
    _num(cfg, "train", "disc_updates", 1, integer=True)
    _num(cfg, "train", "gan_val_m", 2, integer=True)
    _num(cfg, "train", "jobs", 1, integer=True)

    _num(cfg, "eval", "m_eval", 20, integer=True)
    level = _num(cfg, "eval", "interval")
    if not 0 < level < 1:
        raise ConfigError(f"'eval.interval' must lie in (0, 1), got {level}")


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return str(v)


def dump_config(cfg: dict) -> str:
    lines = [f"{k} = {_toml_value(v)}" for k, v in cfg.items() if not isinstance(v, dict)]
    for section, body in cfg.items():
        if isinstance(body, dict):
            lines.append("")
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {_toml_value(v)}" for k, v in body.items())
    return "\n".join(lines) + "\n"
