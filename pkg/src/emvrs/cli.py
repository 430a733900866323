"""Command-line entry points.

Subcommands: train-sim, train-real, label-regimes, backtest and solve-odes.
Every command reads a YAML config (flags override keys one-for-one), seeds
all randomness from one value and writes a run manifest listing each
emitted artifact with its content hash.

Exit codes: 0 ok, 2 config/ingestion error, 3 missing artifact,
4 numerical failure.
"""
from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .backtest import (AC_LEVELS, BacktestSetting, TrainedModel, emv_window,
                       run_backtest)
from .config import (apply_overrides, config_hash, load_yaml,
                     parse_backtest_config, parse_real_config, parse_sim_config)
from .errors import (ConfigError, EmvrsError, IngestionError,
                     MissingArtifactError, NumericalDomainError)
from .market_data import label_regimes, load_series, rolling_windows
from .odes import solve_phcd
from .policy import MarketParams
from .real_trainer import prepare_window, train_windows
from .regimes import GeneratorMatrix
from .sim_trainer import train

EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERICAL = 4


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, cfg_data: dict, seed: int,
                   artifacts: list[Path], command: str) -> Path:
    manifest = {
        "tool_version": __version__,
        "command": command,
        "created_utc": dt.datetime.now(dt.timezone.utc).isoformat(),
        "config_hash": config_hash(cfg_data),
        "seed": seed,
        "outputs": [{"path": str(p), "sha256": _sha256(p)} for p in artifacts],
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _json_dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _fail(exc: Exception, code: int):
    click.echo(f"error: {exc}", err=True)
    sys.exit(code)


@click.group()
@click.version_option(__version__)
def main():
    """Regime-switching exploratory mean-variance toolkit."""


def _load_config(config_path, overrides):
    data = load_yaml(config_path)
    return apply_overrides(data, list(overrides))


@main.command("train-sim")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
              help="Override a config key (dotted path).")
@click.option("--loss", type=click.Choice(["td", "oc"]), default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out-dir", type=click.Path(), default="runs/train-sim")
@click.option("--threads", type=int, default=1, help="Worker cap (recorded).")
def cmd_train_sim(config_path, overrides, loss, epochs, seed, out_dir, threads):
    """Train on a simulated market and emit a training log and summary."""
    try:
        data = _load_config(config_path, overrides)
        if loss is not None:
            data["loss"] = loss
        if epochs is not None:
            data.setdefault("learn", {})["n_epochs"] = epochs
        if seed is not None:
            data["seed"] = seed
        cfg = parse_sim_config(data)
    except ConfigError as exc:
        _fail(exc, EXIT_CONFIG)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        history = train(cfg)
    except NumericalDomainError as exc:
        _fail(exc, EXIT_NUMERICAL)
    log_path = out / "training_log.csv"
    history.to_csv(log_path)
    summary = history.summary(cfg.theta_true.theta)
    summary["seed"] = cfg.seed
    summary["loss_kind"] = cfg.loss_kind
    sum_path = out / "summary.json"
    _json_dump(sum_path, summary)
    write_manifest(out, data, cfg.seed, [log_path, sum_path], "train-sim")
    click.echo(f"final theta: {np.round(history.final_theta, 6).tolist()}")
    click.echo(f"artifacts in {out}")


@main.command("label-regimes")
@click.option("--data", "data_path", required=True, type=click.Path())
@click.option("--states", type=int, default=2, show_default=True)
@click.option("--rate-unit", type=click.Choice(["decimal", "percent"]),
              default="decimal", show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Output CSV (default: <data>_labeled.csv).")
def cmd_label_regimes(data_path, states, rate_unit, out_path):
    """Label market regimes on a price series with a Gaussian HMM."""
    try:
        series = load_series(data_path, rate_unit=rate_unit)
        model, labels = label_regimes(series, n_states=states)
    except (IngestionError, ConfigError) as exc:
        _fail(exc, EXIT_CONFIG)
    except ValueError as exc:
        _fail(exc, EXIT_CONFIG)
    out = Path(out_path) if out_path else Path(data_path).with_name(
        Path(data_path).stem + "_labeled.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "price", "rate", "regime"])
        for k in range(len(series)):
            w.writerow([series.dates[k].isoformat(),
                        f"{series.prices[k]:.17g}",
                        f"{series.rates[k]:.17g}", int(labels[k])])
    click.echo(f"states: {model.n_states}")
    click.echo(f"means: {np.round(model.means, 8).tolist()}")
    click.echo(f"variances: {np.round(model.variances, 12).tolist()}")
    click.echo(f"transitions: {np.round(model.trans, 6).tolist()}")
    click.echo(f"labeled series written to {out}")


@main.command("train-real")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE")
@click.option("--loss", type=click.Choice(["td", "oc"]), default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out-dir", type=click.Path(), default="runs/train-real")
@click.option("--threads", type=int, default=1)
def cmd_train_real(config_path, overrides, loss, epochs, seed, out_dir, threads):
    """Train on an observed price series across rolling windows."""
    try:
        data = _load_config(config_path, overrides)
        if loss is not None:
            data["loss"] = loss
        if epochs is not None:
            data.setdefault("learn", {})["n_epochs"] = epochs
        if seed is not None:
            data["seed"] = seed
        cfg, data_file, rate_unit, spec, n_regimes = parse_real_config(data)
        series = load_series(data_file, rate_unit=rate_unit)
    except (ConfigError, IngestionError) as exc:
        _fail(exc, EXIT_CONFIG)
    except FileNotFoundError as exc:
        _fail(MissingArtifactError(str(exc)), EXIT_MISSING)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        slices = rolling_windows(series, spec)
        windows = []
        for sl in slices:
            _, labels = label_regimes(sl, n_states=n_regimes)
            windows.append(prepare_window(sl, labels, n_regimes=n_regimes,
                                          dt=cfg.dt, substeps=cfg.substeps))
        histories, finals = train_windows(windows, cfg)
    except NumericalDomainError as exc:
        _fail(exc, EXIT_NUMERICAL)
    except (ValueError, EmvrsError) as exc:
        _fail(exc, EXIT_CONFIG)

    artifacts = []
    model_entries = []
    for w_idx, (sl, window, hist, theta) in enumerate(
            zip(slices, windows, histories, finals)):
        log_path = out / f"training_log_w{w_idx:02d}.csv"
        hist.to_csv(log_path)
        artifacts.append(log_path)
        model_entries.append({
            "window": w_idx,
            "start": sl.dates[0].isoformat(),
            "end": sl.dates[-1].isoformat(),
            "sigma": theta.sigma.tolist(),
            "rho": theta.rho.tolist(),
            "regime_rates": window.regime_rates.tolist(),
            "generator": window.gen.q.tolist(),
        })
    models_path = out / "trained_models.json"
    _json_dump(models_path, {
        "learning": cfg.loss_kind, "xi": cfg.xi, "x0": cfg.x0, "z": cfg.z,
        "n_regimes": n_regimes, "windows": model_entries,
    })
    artifacts.append(models_path)
    write_manifest(out, data, cfg.seed, artifacts, "train-real")
    click.echo(f"trained {len(windows)} windows; artifacts in {out}")


@main.command("backtest")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE")
@click.option("--seed", type=int, default=None)
@click.option("--out-dir", type=click.Path(), default="runs/backtest")
@click.option("--threads", type=int, default=1)
def cmd_backtest(config_path, overrides, seed, out_dir, threads):
    """Evaluate trained models over rolling windows and emit a report."""
    try:
        data = _load_config(config_path, overrides)
        if seed is not None:
            data["seed"] = seed
        (models_file, data_file, rate_unit, spec, repeats, run_seed,
         settings, n_regimes) = parse_backtest_config(data)
    except ConfigError as exc:
        _fail(exc, EXIT_CONFIG)
    missing = [p for p in (models_file, data_file) if not Path(p).exists()]
    if missing:
        click.echo("error: missing artifacts: " + ", ".join(missing), err=True)
        sys.exit(EXIT_MISSING)
    try:
        series = load_series(data_file, rate_unit=rate_unit)
        model_doc = json.loads(Path(models_file).read_text())
        slices = rolling_windows(series, spec)
    except (IngestionError, ValueError) as exc:
        _fail(exc, EXIT_CONFIG)
    if len(model_doc["windows"]) != len(slices):
        click.echo(f"error: {len(slices)} windows but "
                   f"{len(model_doc['windows'])} trained models", err=True)
        sys.exit(EXIT_MISSING)

    xi, x0, z = model_doc["xi"], model_doc["x0"], model_doc["z"]
    learning = model_doc.get("learning", "oc").upper()
    windows, models = [], []
    for sl, entry in zip(slices, model_doc["windows"]):
        _, labels = label_regimes(sl, n_states=n_regimes)
        w = prepare_window(sl, labels, n_regimes=n_regimes)
        windows.append(w)
        models.append(TrainedModel(
            theta=MarketParams(sigma=np.asarray(entry["sigma"]),
                               rho=np.asarray(entry["rho"]),
                               r=np.asarray(entry["regime_rates"])),
            gen=GeneratorMatrix(np.asarray(entry["generator"]))))

    if not settings:
        settings = [BacktestSetting(ac, ss, "EMVRS", learning)
                    for ac in AC_LEVELS for ss in (True, False)]
    reports = []
    try:
        for setting in settings:
            use_windows, use_models = windows, models
            if setting.model == "EMV":
                use_windows = [emv_window(w) for w in windows]
                use_models = [TrainedModel(
                    theta=MarketParams(sigma=[m.theta.sigma.mean()],
                                       rho=[m.theta.rho.mean()],
                                       r=[w.rates.mean()]),
                    gen=GeneratorMatrix(np.zeros((1, 1))))
                    for m, w in zip(models, use_windows)]
            reports.append(run_backtest(use_windows, use_models, setting,
                                        repeats, run_seed, xi, x0, z))
    except NumericalDomainError as exc:
        _fail(exc, EXIT_NUMERICAL)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "backtest_report.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["training", "action_constraint", "short_selling", "model",
                    "mean_annual_return", "vol_annual_return", "sharpe",
                    "rf_annual", "n_trajectories", "n_excluded"])
        for rep in reports:
            s = rep.setting
            w.writerow([s.learning, s.action_constraint,
                        "yes" if s.short_selling else "no", s.model,
                        f"{rep.mean_annual_return:.17g}",
                        f"{rep.vol_annual_return:.17g}",
                        f"{rep.sharpe:.17g}", f"{rep.rf_annual:.17g}",
                        rep.n_trajectories, rep.n_excluded])
    json_path = out / "backtest_report.json"
    _json_dump(json_path, [{
        "learning": r.setting.learning,
        "action_constraint": r.setting.action_constraint,
        "short_selling": r.setting.short_selling,
        "model": r.setting.model,
        "mean_annual_return": r.mean_annual_return,
        "vol_annual_return": r.vol_annual_return,
        "sharpe": r.sharpe,
        "rf_annual": r.rf_annual,
        "n_trajectories": r.n_trajectories,
        "n_excluded": r.n_excluded,
        "terminal_values": r.terminal_values.tolist(),
    } for r in reports])
    write_manifest(out, data, run_seed, [csv_path, json_path], "backtest")
    click.echo(f"report rows: {len(reports)}; artifacts in {out}")


@main.command("solve-odes")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE")
@click.option("--out", "out_path", type=click.Path(), default="coefficients.csv")
def cmd_solve_odes(config_path, overrides, out_path):
    """Dump the value-function coefficient grids for a config (debugging)."""
    try:
        data = _load_config(config_path, overrides)
        cfg = parse_sim_config(data)
    except ConfigError as exc:
        _fail(exc, EXIT_CONFIG)
    try:
        coeffs = solve_phcd(cfg.theta0, cfg.gen, cfg.grid, cfg.xi)
    except NumericalDomainError as exc:
        _fail(exc, EXIT_NUMERICAL)
    coeffs.to_csv(out_path)
    click.echo(f"coefficient grid written to {out_path}")


if __name__ == "__main__":
    main()
