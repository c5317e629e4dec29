"""INI-style run configuration with a closed schema.

Every section and key must be known; typos fail loudly with the offending
name. Values not given fall back to the defaults below.
"""
from __future__ import annotations

import configparser
import copy
import math
from pathlib import Path
from typing import Any, Callable


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _words(text: str) -> tuple[str, ...]:
    return tuple(x for x in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(",", " ").split())


def _opt_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none") else float(text)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _thresholds(text: str) -> tuple[float, ...]:
    return tuple(-math.inf if x.lower() in ("-inf", "-infinity") else float(x) for x in text.replace(",", " ").split())


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "run": {
        "env": (str, ""),
        "seed": (int, 0),
        "out": (str, "runs/out"),
    },
    "env": {
        "gamma": (_opt_float, None),
        "max_steps": (int, 0),
        "keying": (str, ""),
        # tabular environments
        "states": (int, 3),
        "actions": (int, 2),
        "sources": (int, 2),
        "mdp_seed": (int, 0),
    },
    "learner": {
        "particles": (int, 200),
        "kernel": (str, "W1"),
        "squared_bandwidths": (_floats, ()),
        "lr": (float, 0.03),
        "lr_final": (_opt_float, 0.002),
        "optimizer": (str, "adam"),
        "adam_beta1": (float, 0.9),
        "adam_beta2": (float, 0.999),
        "adam_eps": (float, 1e-8),
        "target_sync_period": (int, 10),
        "eps_start": (float, 1.0),
        "eps_end": (float, 0.01),
        "eps_decay_steps": (int, 20_000),
        "replay_capacity": (int, 10_000),
        "batch_size": (int, 64),
        "min_replay": (int, 500),
        "train_every": (int, 4),
        "init_low": (float, 0.0),
        "init_high": (float, 0.1),
    },
    "schedule": {
        "total_steps": (int, 20_000),
        "eval_every": (int, 1000),
        "eval_episodes": (int, 50),
    },
    "oracle": {
        "count": (int, 5000),
        "tail_tol": (float, 1e-6),
        "reference_kernel": (str, "W1"),
    },
    "constraint": {
        "thresholds": (_thresholds, (0.6, 0.6, 0.6)),
        "methods": (_words, ("joint", "marginal-sum", "marginal-prod")),
        "seeds": (_ints, (0, 1, 2)),
        "eval_episodes": (int, 200),
    },
    "verify": {
        "trials": (int, 100),
        "p": (_floats, (1.0, 2.0)),
        "max_states": (int, 4),
        "max_actions": (int, 3),
        "max_atoms": (int, 8),
        "kernel_pairs": (int, 20),
        "kernel_resamples": (int, 10_000),
        "gradient_instances": (int, 20),
        "iterations": (int, 50),
    },
    "ablation": {
        "presets": (_words, ("W1", "W2", "W3")),
    },
    "output": {
        "scatter_sources": (_ints, (0, 1)),
        "scatter_points": (int, 200),
        "write_svg": (_bool, True),
    },
}


def defaults() -> dict[str, dict[str, Any]]:
    return {sec: {k: copy.copy(v[1]) for k, v in keys.items()} for sec, keys in SCHEMA.items()}


def _set(cfg: dict, section: str, key: str, raw: str) -> None:
    if section not in SCHEMA:
        raise ConfigError(f"unknown config section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown config key {section}.{key}")
    parser = SCHEMA[section][key][0]
    try:
        cfg[section][key] = parser(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {section}.{key}: {raw!r} ({exc})") from None


def load_config(path: str | Path | None = None, overrides: list[str] | None = None) -> dict[str, dict[str, Any]]:
    """Defaults, then the file at ``path``, then ``section.key=value`` overrides."""
    cfg = defaults()
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        for section in parser.sections():
            for key, raw in parser.items(section):
                _set(cfg, section, key, raw)
    for item in overrides or []:
        name, sep, raw = item.partition("=")
        section, dot, key = name.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        _set(cfg, section, key.strip(), raw.strip())
    return cfg


def to_jsonable(cfg: dict) -> dict:
    def conv(v):
        if isinstance(v, tuple):
            return [conv(x) for x in v]
        if isinstance(v, float) and math.isinf(v):
            return "-inf" if v < 0 else "inf"
        return v

    return {sec: {k: conv(v) for k, v in keys.items()} for sec, keys in cfg.items()}
