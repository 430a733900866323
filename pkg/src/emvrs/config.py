"""YAML configuration loading with strict key validation.

Config files mirror the run dataclasses with nested keys; unknown keys are
rejected with their full dotted path so typos surface immediately.  CLI
flags override keys one-for-one via dotted ``key=value`` pairs.
"""
from __future__ import annotations

import hashlib
import json

import numpy as np
import yaml

from .errors import ConfigError
from .losses import LearnSettings
from .odes import TimeGrid
from .policy import MarketParams
from .real_trainer import RealTrainConfig
from .regimes import GeneratorMatrix
from .sim_trainer import SimConfig

_GRID_KEYS = {"T", "dt", "substeps"}
_THETA_KEYS = {"sigma", "rho"}
_BOUNDS_KEYS = {"sigma", "rho"}
_LEARN_KEYS = {"eta", "eta_floor", "eps", "n_epochs", "schedule"}
_SIM_KEYS = {"grid", "generator", "xi", "x0", "z", "rates", "theta_true",
             "theta0", "bounds", "learn", "loss", "seed", "lambda_timing"}
_REAL_KEYS = {"data", "rate_unit", "window", "xi", "x0", "z",
              "action_constraint", "short_selling", "theta0", "bounds",
              "learn", "loss", "seed", "n_regimes", "dt", "substeps"}
_WINDOW_KEYS = {"span_years", "step_months", "count"}
_BACKTEST_KEYS = {"models", "data", "rate_unit", "window", "repeats", "seed",
                  "settings", "n_regimes"}
_SETTING_KEYS = {"action_constraint", "short_selling", "model", "learning"}


def _check_keys(section: dict, allowed: set, prefix: str) -> None:
    if not isinstance(section, dict):
        raise ConfigError(f"{prefix or 'config'} must be a mapping")
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown config key: {prefix}{key}")


def load_yaml(path) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply dotted key=value overrides (values parsed as YAML scalars)."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                node[part] = {}
            node = node[part]
        node[parts[-1]] = value
    return data


def config_hash(data: dict) -> str:
    """Stable content hash of a config mapping."""
    blob = json.dumps(data, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def _grid(section: dict) -> TimeGrid:
    _check_keys(section, _GRID_KEYS, "grid.")
    try:
        return TimeGrid(T=float(section["T"]), dt=float(section["dt"]),
                        substeps=int(section.get("substeps", 10)))
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"grid: {exc}") from exc


def _theta(section: dict, rates, bounds, prefix: str) -> MarketParams:
    _check_keys(section, _THETA_KEYS, prefix)
    try:
        return MarketParams(sigma=np.asarray(section["sigma"], dtype=float),
                            rho=np.asarray(section["rho"], dtype=float),
                            r=np.asarray(rates, dtype=float),
                            sigma_bounds=tuple(bounds.get("sigma", (0.1, 1.0))),
                            rho_bounds=tuple(bounds.get("rho", (-2.0, 2.0))))
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"{prefix}: {exc}") from exc


def _learn(section: dict) -> LearnSettings:
    _check_keys(section, _LEARN_KEYS, "learn.")
    try:
        return LearnSettings(eta=np.asarray(section["eta"], dtype=float),
                             n_epochs=int(section["n_epochs"]),
                             eta_floor=float(section.get("eta_floor", 1e-5)),
                             eps=float(section.get("eps", 1e-3)),
                             schedule=str(section.get("schedule", "geometric")))
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"learn: {exc}") from exc


def parse_sim_config(data: dict) -> SimConfig:
    _check_keys(data, _SIM_KEYS, "")
    for req in ("grid", "generator", "theta_true", "theta0", "learn"):
        if req not in data:
            raise ConfigError(f"missing config key: {req}")
    bounds = data.get("bounds", {})
    _check_keys(bounds, _BOUNDS_KEYS, "bounds.")
    rates = data.get("rates", [0.0] * len(data["theta_true"]["sigma"]))
    try:
        gen = GeneratorMatrix(np.asarray(data["generator"], dtype=float))
    except ValueError as exc:
        raise ConfigError(f"generator: {exc}") from exc
    try:
        return SimConfig(
            grid=_grid(data["grid"]),
            gen=gen,
            xi=float(data.get("xi", 0.5)),
            x0=float(data.get("x0", 1.0)),
            z=float(data.get("z", 1.4)),
            theta_true=_theta(data["theta_true"], rates, bounds, "theta_true."),
            theta0=_theta(data["theta0"], rates, bounds, "theta0."),
            settings=_learn(data["learn"]),
            loss_kind=str(data.get("loss", "oc")),
            seed=int(data.get("seed", 0)),
            lambda_timing=str(data.get("lambda_timing", "pre_sim")),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def parse_real_config(data: dict):
    """Returns (RealTrainConfig, data path, rate unit, WindowSpec kwargs, n_regimes)."""
    from .market_data import WindowSpec

    _check_keys(data, _REAL_KEYS, "")
    for req in ("data", "theta0", "learn", "window"):
        if req not in data:
            raise ConfigError(f"missing config key: {req}")
    bounds = data.get("bounds", {})
    _check_keys(bounds, _BOUNDS_KEYS, "bounds.")
    _check_keys(data["window"], _WINDOW_KEYS, "window.")
    n_regimes = int(data.get("n_regimes", 2))
    rates = [0.0] * n_regimes
    try:
        spec = WindowSpec(span_years=int(data["window"]["span_years"]),
                          step_months=int(data["window"].get("step_months", 1)),
                          count=data["window"].get("count"))
        cfg = RealTrainConfig(
            xi=float(data.get("xi", 0.5)),
            x0=float(data.get("x0", 1.0)),
            z=float(data.get("z", 1.4)),
            action_constraint=float(data.get("action_constraint", 3.0)),
            short_selling=bool(data.get("short_selling", True)),
            theta0=_theta(data["theta0"], rates, bounds, "theta0."),
            settings=_learn(data["learn"]),
            loss_kind=str(data.get("loss", "oc")),
            seed=int(data.get("seed", 0)),
            dt=float(data.get("dt", 1.0 / 12.0)),
            substeps=int(data.get("substeps", 10)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg, str(data["data"]), str(data.get("rate_unit", "decimal")), spec, n_regimes


def parse_backtest_config(data: dict):
    from .backtest import BacktestSetting
    from .market_data import WindowSpec

    _check_keys(data, _BACKTEST_KEYS, "")
    for req in ("models", "data", "window"):
        if req not in data:
            raise ConfigError(f"missing config key: {req}")
    _check_keys(data["window"], _WINDOW_KEYS, "window.")
    settings = []
    for k, s in enumerate(data.get("settings", [])):
        _check_keys(s, _SETTING_KEYS, f"settings[{k}].")
        try:
            settings.append(BacktestSetting(
                action_constraint=float(s["action_constraint"]),
                short_selling=bool(s["short_selling"]),
                model=str(s.get("model", "EMVRS")),
                learning=str(s.get("learning", "OC"))))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"settings[{k}]: {exc}") from exc
    spec = WindowSpec(span_years=int(data["window"]["span_years"]),
                      step_months=int(data["window"].get("step_months", 1)),
                      count=data["window"].get("count"))
    return (str(data["models"]), str(data["data"]),
            str(data.get("rate_unit", "decimal")), spec,
            int(data.get("repeats", 5)), int(data.get("seed", 0)),
            settings, int(data.get("n_regimes", 2)))
