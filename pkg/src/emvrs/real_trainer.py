"""Training on observed price series.

Prices, rates and regime labels over a window are fixed; the only
randomness is exploration.  Each epoch samples actions from the current
policy, rolls the bookkept wealth recursion
X_{k+1} = u_k S_{k+1}/S_k + (X_k - u_k)(1 + r_k dt), evaluates the realized
loss on that path and updates the parameters exactly as in the simulated
loop.  The coefficient ODEs need a generator and per-regime rates; both are
estimated from the labeled series.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NumericalDomainError
from .losses import LearnSettings, apply_update, oc_losses, td_losses_perturbed
from .market_data import MarketSeries, monthly_indices
from .odes import TimeGrid, ValueCoefficients, solve_phcd_arrays
from .policy import (InvestmentTarget, MarketParams, classical_control,
                     optimal_lambda, policy_distribution, sample_action)
from .regimes import GeneratorMatrix, estimate_generator
from .rng import substream
from .sim_trainer import EpochPath, ParameterHistory


@dataclass(frozen=True)
class RealTrainConfig:
    """Configuration for training on one observed window."""

    xi: float
    x0: float
    z: float
    action_constraint: float
    short_selling: bool
    theta0: MarketParams
    settings: LearnSettings
    loss_kind: str = "oc"
    seed: int = 0
    dt: float = 1.0 / 12.0
    substeps: int = 10

    def __post_init__(self):
        if self.loss_kind not in ("td", "oc"):
            raise ValueError(f"loss_kind must be 'td' or 'oc', got {self.loss_kind!r}")
        if self.action_constraint <= 0:
            raise ValueError("action constraint must be > 0")


@dataclass
class WindowData:
    """Monthly-sampled prices, rates and 1-based regime labels for a window."""

    prices: np.ndarray
    rates: np.ndarray
    labels: np.ndarray
    gen: GeneratorMatrix
    regime_rates: np.ndarray
    grid: TimeGrid

    @property
    def K(self) -> int:
        return len(self.prices) - 1


def prepare_window(series: MarketSeries, labels_daily: np.ndarray,
                   n_regimes: int = 2, dt: float = 1.0 / 12.0,
                   substeps: int = 10) -> WindowData:
    """Monthly-sample a labeled daily window into trainer inputs.

    Sampling takes the window's first trading day plus each month's last
    trading day.  Per-regime rates are the label-conditional means of the
    observed rate series; the generator comes from the monthly label chain.
    """
    idx = monthly_indices(series.dates)
    prices = series.prices[idx]
    rates = series.rates[idx]
    labels = np.asarray(labels_daily, dtype=np.int64)[idx]
    k = len(idx) - 1
    grid = TimeGrid(T=k * dt, dt=dt, substeps=substeps)
    regime_rates = np.empty(n_regimes)
    for i in range(1, n_regimes + 1):
        mask = np.asarray(labels_daily) == i
        regime_rates[i - 1] = series.rates[mask].mean() if mask.any() \
            else series.rates.mean()
    gen = estimate_generator(labels, dt, n_regimes)
    return WindowData(prices=prices, rates=rates, labels=labels, gen=gen,
                      regime_rates=regime_rates, grid=grid)


def wealth_path_real(prices: np.ndarray, rates: np.ndarray, labels: np.ndarray,
                     theta: MarketParams, coeffs: ValueCoefficients,
                     target: InvestmentTarget, constraint: float,
                     short_selling: bool, seed) -> EpochPath:
    """Sample actions from the current policy and roll the wealth recursion.

    Returns an EpochPath whose dW slot carries the sampled actions.
    """
    k_count = len(prices) - 1
    if len(rates) != k_count + 1 or len(labels) != k_count + 1:
        raise ValueError("prices, rates and labels must share one grid")
    rng = substream(seed, "actions") if isinstance(seed, int) else seed
    dt = coeffs.grid.dt
    x = np.empty(k_count + 1)
    x[0] = target.x0
    actions = np.empty(k_count)
    for k in range(k_count):
        i = int(labels[k])
        if target.xi > 0:
            pol = policy_distribution(coeffs, theta, k, x[k], i, target)
            u = sample_action(pol, constraint, short_selling, target.x0, rng)
        else:  # exploration off: deterministic control, clipped the same way
            mean = classical_control(coeffs, theta, k, x[k], i, target)
            lo = -constraint * target.x0 if short_selling else 0.0
            u = float(np.clip(mean, lo, constraint * target.x0))
        actions[k] = u
        x[k + 1] = u * prices[k + 1] / prices[k] + (x[k] - u) * (1.0 + rates[k] * dt)
        if not np.isfinite(x[k + 1]):
            raise NumericalDomainError(f"wealth became non-finite at step {k + 1}")
    return EpochPath(dW=actions, alphas=labels, X=x)


def train_real(window: WindowData, config: RealTrainConfig) -> ParameterHistory:
    """Run the real-data training loop on one window.

    The per-regime rates for the coefficient ODEs are the window's
    label-conditional rate means, regardless of the rates carried by the
    initial parameters.
    """
    theta = MarketParams(sigma=config.theta0.sigma, rho=config.theta0.rho,
                         r=window.regime_rates,
                         sigma_bounds=config.theta0.sigma_bounds,
                         rho_bounds=config.theta0.rho_bounds)
    n_params = len(theta.theta)
    n = config.settings.n_epochs
    grid = window.grid
    gen = window.gen
    eps = config.settings.eps

    hist_theta = np.full((n + 1, n_params), np.nan)
    hist_lam = np.full(n + 1, np.nan)
    hist_loss = np.full(n + 1, np.nan)
    hist_oc = np.full((n + 1, n_params), np.nan)
    hist_theta[0] = theta.theta
    target0 = InvestmentTarget(config.x0, config.z, config.xi)

    for epoch in range(n):
        coeffs = _solve(theta, gen, grid, config.xi)
        lam = optimal_lambda(coeffs, config.x0, int(window.labels[0]), config.z)
        target = target0.with_lambda(lam)
        rng = substream(config.seed, "actions", epoch)
        try:
            path = wealth_path_real(window.prices, window.rates, window.labels,
                                    theta, coeffs, target,
                                    config.action_constraint,
                                    config.short_selling, rng)
        except NumericalDomainError as exc:
            raise NumericalDomainError(f"epoch {epoch}: {exc}") from exc

        if config.loss_kind == "oc":
            signals = oc_losses(path, theta, target, grid, gen, eps)
            hist_oc[epoch + 1] = signals
        else:
            losses = td_losses_perturbed(path, theta, target, grid, gen, eps)
            signals = np.array([(losses[1 + 2 * j] - losses[2 + 2 * j])
                                / (2.0 * eps) for j in range(n_params)])
            hist_loss[epoch + 1] = losses[0]
        theta = apply_update(theta, config.loss_kind, signals,
                             config.settings, epoch)
        hist_theta[epoch + 1] = theta.theta
        hist_lam[epoch + 1] = lam

    return ParameterHistory(theta=hist_theta, lam=hist_lam, loss=hist_loss,
                            oc=hist_oc, l=theta.l)


def train_windows(windows: list[WindowData], config: RealTrainConfig):
    """Train across chained windows, seeding each from the previous result.

    Returns (list of ParameterHistory, list of final MarketParams).
    """
    histories, finals = [], []
    theta = config.theta0
    for w_idx, window in enumerate(windows):
        cfg = replace(config, theta0=theta, seed=config.seed + w_idx)
        hist = train_real(window, cfg)
        histories.append(hist)
        theta = theta.with_theta(hist.final_theta)
        finals.append(theta)
    return histories, finals


def _solve(theta, gen, grid, xi) -> ValueCoefficients:
    fp, fh, fc, fd = solve_phcd_arrays(theta.sigma[None], theta.rho[None],
                                       theta.r, gen, grid, xi)
    s = grid.substeps
    return ValueCoefficients(grid=grid, P=fp[0, ::s], H=fh[0, ::s],
                             C=fc[0, ::s], D=fd[0, ::s])
