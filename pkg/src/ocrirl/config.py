"""Run configuration: INI-style sections with typed defaults and command-line overrides.

Precedence, lowest to highest: built-in defaults, the config file (or the
``config`` block of a manifest), ``--set section.key=value`` flags, and the
dedicated flags of a subcommand (``--seed``, ``--jobs``).
"""
from __future__ import annotations

import configparser
import hashlib
import json
import platform
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    pass


REQUIRED = {("run", "domain")}

DEFAULTS = {
    "run": {"domain": "", "seed": 0},
    "expert": {"n_demos": 0, "epsilon": 0.0, "horizon": 0},   # 0 = domain default
    "option_critic": {"n_options": 4, "episodes": 1500, "max_steps": 1000, "lr_critic": 0.5,
                      "lr_intra": 0.25, "lr_term": 0.25, "temperature": 3.0,
                      "option_temperature": 0.1, "option_epsilon": 0.05, "deliberation_cost": 0.01,
                      "min_return": -60.0},
    "fourrooms": {"slip_prob": 1.0 / 3.0, "gamma": 0.99, "goal": -1},   # -1 = bottom-right cell
    "car_env": {"dt": 0.001, "decision_dt": 0.1, "gamma": 0.95},
    "car": {"subgoal_p": -0.25, "subgoal_v": 1.8, "actions": "-4,4", "n_transitions": 20000,
            "iterations": 40, "grid": 101, "n_estimators": 50, "min_samples_leaf": 2},
    "fit": {"n_per_dim": 9, "delta": "", "ridge": 1e-3, "logistic_l2": 1e-2, "sigma2": 0.01},
    "irl": {"resolution": "", "pi_omega_renorm": "visited", "mu_explicit_pi": False, "max_features": 200,
            "sv_rtol": 1e-10, "eig_tol": 1e-6, "weight_mode": "unit"},
    "extend": {"k": 5, "sigma_s": "", "sigma_a": "", "tabular_fill": "mean"},
    "sarsa": {"episodes": 2000, "lr": 0.1, "temp_start": 1.0, "temp_end": 0.05, "max_steps": 1000},
    "fqi": {"iterations": 50, "n_actions": 11, "n_transitions": 10000, "regressor": "extra_trees",
            "n_estimators": 50, "min_samples_leaf": 2, "knn_k": 10, "horizon": 100},
    "eval": {"repetitions": 20, "jobs": 1},
    "transfer": {"alphas": "0,0.8,1.0"},
    "maxent": {"lr": 0.1, "iters": 200, "horizon": 400},
}

CHOICES = {
    ("run", "domain"): {"fourrooms", "car"},
    ("irl", "pi_omega_renorm"): {"visited", "zero_pad"},
    ("irl", "weight_mode"): {"unit", "sqrt2"},
    ("extend", "tabular_fill"): {"mean", "zero"},
    ("fqi", "regressor"): {"extra_trees", "knn"},
}


def _coerce(section, key, raw):
    default = DEFAULTS[section][key]
    text = str(raw).strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot parse {text!r} as {type(default).__name__}") from None
    value = text
    allowed = CHOICES.get((section, key))
    if allowed and value not in allowed:
        raise ConfigError(f"{section}.{key}: {value!r} not one of {sorted(allowed)}")
    return value


class Config:
    def __init__(self, values: dict):
        self.values = values

    def __getitem__(self, section):
        return self.values[section]

    def get(self, section, key):
        return self.values[section][key]

    def optional_float(self, section, key):
        v = self.values[section][key]
        return None if v in ("", None) else float(v)

    def floats(self, section, key) -> list[float]:
        return [float(x) for x in str(self.values[section][key]).split(",") if x.strip()]

    def as_dict(self) -> dict:
        return {s: dict(kv) for s, kv in self.values.items()}


def _apply(values, section, key, raw, origin):
    if section not in DEFAULTS:
        raise ConfigError(f"{origin}: unknown section [{section}]")
    if key not in DEFAULTS[section]:
        raise ConfigError(f"{origin}: unknown key {section}.{key}")
    values[section][key] = _coerce(section, key, raw)


def load_config(path=None, overrides=()) -> Config:
    """Resolve a configuration from an INI file (or manifest JSON) plus overrides."""
    values = {s: dict(kv) for s, kv in DEFAULTS.items()}
    seen = set()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        text = path.read_text(encoding="utf-8")
        if path.suffix == ".json":
            try:
                block = json.loads(text)["config"]
            except (json.JSONDecodeError, KeyError) as exc:
                raise ConfigError(f"{path}: not a manifest ({exc})") from None
            for section, kv in block.items():
                for key, raw in kv.items():
                    _apply(values, section, key, raw, str(path))
                    seen.add((section, key))
        else:
            cp = configparser.ConfigParser(interpolation=None)
            try:
                cp.read_string(text, source=str(path))
            except configparser.Error as exc:
                raise ConfigError(f"config parse error: {exc}") from None
            for section in cp.sections():
                for key, raw in cp.items(section):
                    _apply(values, section, key, raw, f"{path} [{section}]")
                    seen.add((section, key))
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} is not section.key=value")
        lhs, raw = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        _apply(values, section, key, raw, "--set")
        seen.add((section, key))
    for section, key in sorted(REQUIRED):
        if (section, key) not in seen:
            raise ConfigError(f"missing required config key {section}.{key}")
    return Config(values)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command: str, cfg: Config, inputs=(), outputs=(), extra=None) -> Path:
    """Record the resolved config, seeds, versions and input/output digests of a run."""
    import scipy
    import sklearn

    from . import __version__

    out_dir = Path(out_dir)
    manifest = {
        "command": command,
        "tool_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit_learn": sklearn.__version__,
        "seed": cfg.get("run", "seed"),
        "config": cfg.as_dict(),
        "inputs": {str(p): file_digest(p) for p in inputs},
        "outputs": sorted(str(Path(p).name) for p in outputs),
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
