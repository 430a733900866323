"""Rolling-window evaluation: repeated trades, annualization, Sharpe ratios.

Each (window, repeat) cell rolls one wealth trajectory with a trained
policy under an action constraint / short-selling setting.  Terminal values
are annualized geometrically (X_T^(1/T) - 1); the volatility is the standard
deviation of per-trajectory annualized returns, and the risk-free benchmark
is the average bond-only terminal value across windows, annualized.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .odes import ValueCoefficients, solve_phcd_arrays
from .policy import InvestmentTarget, MarketParams, optimal_lambda
from .real_trainer import WindowData, wealth_path_real
from .regimes import GeneratorMatrix
from .rng import substream

AC_LEVELS = (1.0, 1.5, 2.0, 3.0)


@dataclass(frozen=True)
class BacktestSetting:
    """One evaluation cell: constraint level, short-selling flag, model, learning."""

    action_constraint: float
    short_selling: bool
    model: str = "EMVRS"
    learning: str = "OC"

    def __post_init__(self):
        if self.action_constraint <= 0:
            raise ValueError("action constraint must be > 0")
        if self.model not in ("EMVRS", "EMV"):
            raise ValueError(f"model must be 'EMVRS' or 'EMV', got {self.model!r}")
        if self.learning not in ("TD", "OC"):
            raise ValueError(f"learning must be 'TD' or 'OC', got {self.learning!r}")


@dataclass
class BacktestReport:
    """Aggregated statistics over windows x repeats trajectories."""

    setting: BacktestSetting
    mean_annual_return: float
    vol_annual_return: float
    sharpe: float
    rf_annual: float
    n_trajectories: int
    n_excluded: int
    terminal_values: np.ndarray  # (windows, repeats)


def annualize(terminal_values, T: float):
    """Geometric annualized mean and volatility of terminal wealth ratios.

    Per-trajectory annual return is X_T^(1/T) - 1 (initial wealth 1).
    Non-positive terminal values are excluded with a warning.
    """
    if T <= 0:
        raise ValueError("horizon must be positive")
    x = np.asarray(terminal_values, dtype=np.float64).ravel()
    good = x > 0
    if not np.all(good):
        warnings.warn(f"excluded {int((~good).sum())} non-positive terminal values",
                      RuntimeWarning, stacklevel=2)
        x = x[good]
    if x.size == 0:
        raise ValueError("no positive terminal values to annualize")
    annual = x ** (1.0 / T) - 1.0
    return float(annual.mean()), float(annual.std())


def sharpe(mean_annual: float, vol_annual: float, rf_annual: float) -> float:
    """(mean - rf) / vol; undefined at zero volatility."""
    if vol_annual <= 0:
        raise ZeroDivisionError("Sharpe ratio undefined for zero volatility")
    return (mean_annual - rf_annual) / vol_annual


@dataclass(frozen=True)
class TrainedModel:
    """Per-window trained parameters as consumed by the backtest."""

    theta: MarketParams
    gen: GeneratorMatrix


def bond_only_terminal(window: WindowData, x0: float = 1.0) -> float:
    """Terminal wealth of the all-bond portfolio on one window."""
    dt = window.grid.dt
    return float(x0 * np.prod(1.0 + window.rates[:-1] * dt))


def risk_free_benchmark(windows: list[WindowData], T: float, x0: float = 1.0) -> float:
    """Annualized return of the average bond-only terminal value."""
    avg = float(np.mean([bond_only_terminal(w, x0) for w in windows]))
    return avg ** (1.0 / T) - 1.0


def run_backtest(windows: list[WindowData], models: list[TrainedModel],
                 setting: BacktestSetting, repeats: int, seed: int,
                 xi: float, x0: float, z: float) -> BacktestReport:
    """Trade ``repeats`` times on every window with its trained policy."""
    if len(models) != len(windows):
        raise ConfigError(f"{len(windows)} windows but {len(models)} trained models")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    T = windows[0].grid.T
    terminals = np.empty((len(windows), repeats))
    for w_idx, (window, model) in enumerate(zip(windows, models)):
        coeffs = _solve(model.theta, model.gen, window.grid, xi)
        lam = optimal_lambda(coeffs, x0, int(window.labels[0]), z)
        target = InvestmentTarget(x0, z, xi, lam)
        for rep in range(repeats):
            rng = substream(seed, "backtest", w_idx, rep)
            path = wealth_path_real(window.prices, window.rates, window.labels,
                                    model.theta, coeffs, target,
                                    setting.action_constraint,
                                    setting.short_selling, rng)
            terminals[w_idx, rep] = path.X[-1]

    n_excluded = int((terminals <= 0).sum())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean_a, vol_a = annualize(terminals, T)
    rf = risk_free_benchmark(windows, T, x0)
    sr = sharpe(mean_a, vol_a, rf) if vol_a > 0 else float("nan")
    return BacktestReport(setting=setting, mean_annual_return=mean_a,
                          vol_annual_return=vol_a, sharpe=sr, rf_annual=rf,
                          n_trajectories=terminals.size, n_excluded=n_excluded,
                          terminal_values=terminals)


def emv_window(window: WindowData) -> WindowData:
    """Single-regime view of a window: labels collapsed, rates averaged."""
    return WindowData(prices=window.prices, rates=window.rates,
                      labels=np.ones_like(window.labels),
                      gen=GeneratorMatrix(np.zeros((1, 1))),
                      regime_rates=np.array([window.rates.mean()]),
                      grid=window.grid)


def _solve(theta, gen, grid, xi) -> ValueCoefficients:
    fp, fh, fc, fd = solve_phcd_arrays(theta.sigma[None], theta.rho[None],
                                       theta.r, gen, grid, xi)
    s = grid.substeps
    return ValueCoefficients(grid=grid, P=fp[0, ::s], H=fh[0, ::s],
                             C=fc[0, ::s], D=fd[0, ::s])
