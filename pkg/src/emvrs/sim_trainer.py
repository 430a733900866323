"""Simulated-market training loop.

Each epoch fixes a Brownian path and a regime path, simulates the wealth
recursion with a hybrid of true parameters (market dynamics) and current
parameters (policy), solves the coefficient system at the current
parameters, recomputes the multiplier, evaluates the configured loss on the
realized path and updates the parameters.  Deterministic given the seed.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalDomainError
from .losses import (LearnSettings, apply_update, oc_losses,
                     td_gradients, td_losses_perturbed)
from .odes import TimeGrid, ValueCoefficients, solve_phcd_arrays
from .policy import InvestmentTarget, MarketParams, optimal_lambda
from .regimes import GeneratorMatrix, sample_regime_path
from .rng import substream


@dataclass(frozen=True)
class SimConfig:
    """Full configuration of a simulated training run."""

    grid: TimeGrid
    gen: GeneratorMatrix
    xi: float
    x0: float
    z: float
    theta_true: MarketParams
    theta0: MarketParams
    settings: LearnSettings
    loss_kind: str = "oc"
    seed: int = 0
    lambda_timing: str = "pre_sim"

    def __post_init__(self):
        if self.loss_kind not in ("td", "oc"):
            raise ValueError(f"loss_kind must be 'td' or 'oc', got {self.loss_kind!r}")
        if self.lambda_timing not in ("pre_sim", "post_sim"):
            raise ValueError(f"lambda_timing must be 'pre_sim' or 'post_sim'")
        self.theta_true.validate_bounds()


@dataclass(frozen=True)
class EpochPath:
    """One epoch's fixed Brownian increments, regime path and wealth path."""

    dW: np.ndarray
    alphas: np.ndarray
    X: np.ndarray


@dataclass
class ParameterHistory:
    """Per-epoch parameter, multiplier and loss records (row 0 = init)."""

    theta: np.ndarray        # (n_epochs + 1, 2l)
    lam: np.ndarray          # (n_epochs + 1,)
    loss: np.ndarray         # (n_epochs + 1,) TD loss, NaN for OC runs / row 0
    oc: np.ndarray           # (n_epochs + 1, 2l) OC signals, NaN for TD runs / row 0
    l: int

    @property
    def final_theta(self) -> np.ndarray:
        return self.theta[-1]

    def param_names(self) -> list[str]:
        return ([f"sigma{i + 1}" for i in range(self.l)]
                + [f"rho{i + 1}" for i in range(self.l)])

    def to_csv(self, path) -> None:
        names = self.param_names()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch"] + names + ["lambda", "td_loss"]
                       + [f"oc_{n}" for n in names])
            for n in range(len(self.lam)):
                row = [n] + [f"{v:.17g}" for v in self.theta[n]]
                row.append(f"{self.lam[n]:.17g}")
                row.append(f"{self.loss[n]:.17g}")
                row += [f"{v:.17g}" for v in self.oc[n]]
                w.writerow(row)

    def summary(self, theta_true: np.ndarray | None = None) -> dict:
        names = self.param_names()
        out = {"n_epochs": len(self.lam) - 1,
               "final_theta": dict(zip(names, map(float, self.final_theta)))}
        if theta_true is not None:
            err = np.abs(self.final_theta - np.asarray(theta_true))
            out["abs_error"] = dict(zip(names, map(float, err)))
            out["max_abs_error"] = float(err.max())
        return out


def simulate_wealth_path(theta: MarketParams, theta_true: MarketParams,
                         coeffs: ValueCoefficients, alphas: np.ndarray,
                         dW: np.ndarray, target: InvestmentTarget,
                         grid: TimeGrid) -> np.ndarray:
    """Discretized exploratory wealth recursion over one epoch.

    Drift and diffusion take the aggregated (policy-averaged) form: the true
    parameters drive the market terms, the learned parameters shape the
    policy mean and variance.
    """
    dz = target.lam - target.z
    k_count = grid.K
    if len(dW) != k_count or len(alphas) != k_count + 1:
        raise ValueError("path length inconsistent with the grid")
    x = np.empty(k_count + 1)
    x[0] = target.x0
    dt = grid.dt
    for k in range(k_count):
        i = alphas[k] - 1
        s, rho = theta.sigma[i], theta.rho[i]
        st, rt = theta_true.sigma[i], theta_true.rho[i]
        y = x[k] + dz * coeffs.H[k, i]
        drift = theta.r[i] * x[k] + rt * st * (-(rho / s) * y)
        var = (rho * rho) / (s * s) * y * y
        if target.xi > 0:
            var = var + target.xi / (2.0 * s * s * coeffs.P[k, i])
        x[k + 1] = x[k] + drift * dt + st * np.sqrt(var) * dW[k]
        if not np.isfinite(x[k + 1]):
            raise NumericalDomainError(f"wealth became non-finite at step {k + 1}")
    return x


def _coarse(coeff_stack, substeps):
    return tuple(a[:, ::substeps] for a in coeff_stack)


def train(config: SimConfig, log_every: int = 0) -> ParameterHistory:
    """Run the training loop and return the full parameter history."""
    grid, gen = config.grid, config.gen
    theta = config.theta0
    n_params = len(theta.theta)
    n = config.settings.n_epochs
    eps = config.settings.eps

    hist_theta = np.full((n + 1, n_params), np.nan)
    hist_lam = np.full(n + 1, np.nan)
    hist_loss = np.full(n + 1, np.nan)
    hist_oc = np.full((n + 1, n_params), np.nan)
    hist_theta[0] = theta.theta

    target0 = InvestmentTarget(config.x0, config.z, config.xi)
    lam_prev: float | None = None

    for epoch in range(n):
        rng_init = substream(config.seed, "init_regime", epoch)
        rng_regime = substream(config.seed, "regime", epoch)
        rng_dw = substream(config.seed, "dw", epoch)

        alpha0 = int(rng_init.integers(1, gen.l + 1))
        path_alphas = sample_regime_path(gen, grid.dt, grid.K, alpha0,
                                         rng_regime).alphas
        dw = rng_dw.normal(0.0, np.sqrt(grid.dt), grid.K)

        coeffs = _solve_value_coeffs(theta, gen, grid, config.xi)
        lam_now = optimal_lambda(coeffs, config.x0, alpha0, config.z)
        if config.lambda_timing == "pre_sim" or lam_prev is None:
            lam_sim = lam_now
        else:
            lam_sim = lam_prev
        target = target0.with_lambda(lam_sim)

        try:
            x = simulate_wealth_path(theta, config.theta_true, coeffs,
                                     path_alphas, dw, target, grid)
        except NumericalDomainError as exc:
            raise NumericalDomainError(f"epoch {epoch}: {exc}") from exc
        path = EpochPath(dW=dw, alphas=path_alphas, X=x)

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
        lam_prev = lam_now
        hist_theta[epoch + 1] = theta.theta
        hist_lam[epoch + 1] = lam_now
        if log_every and (epoch + 1) % log_every == 0:
            print(f"epoch {epoch + 1}: theta={np.round(theta.theta, 4)}")

    return ParameterHistory(theta=hist_theta, lam=hist_lam, loss=hist_loss,
                            oc=hist_oc, l=theta.l)


def _solve_value_coeffs(theta, gen, grid, xi) -> ValueCoefficients:
    fp, fh, fc, fd = solve_phcd_arrays(theta.sigma[None], theta.rho[None],
                                       theta.r, gen, grid, xi)
    s = grid.substeps
    return ValueCoefficients(grid=grid, P=fp[0, ::s], H=fh[0, ::s],
                             C=fc[0, ::s], D=fd[0, ::s])
