"""Martingale increments, TD and orthogonality-condition losses, updates.

The learned value function induces a process M (value plus accumulated
exploration cost) that is a martingale exactly when the learned parameters
match the market's.  The TD loss is the mean-square of its discretized
increments; the OC loss weights the increments by the value function's
parameter sensitivities and is zero in expectation at the true parameters.
Parameter sensitivities and TD gradients use central differences, each
probe requiring a fresh backward solve.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels._ode_numpy import _rhs
from .odes import TimeGrid, ValueCoefficients, solve_phcd_arrays
from .policy import InvestmentTarget, MarketParams
from .regimes import GeneratorMatrix


@dataclass(frozen=True)
class LearnSettings:
    """Per-parameter learning rates, probe step and epoch budget.

    ``eta`` has one entry per learned parameter (sigmas then rhos).  Rates
    decay from their initial values to ``eta_floor`` over ``n_epochs``
    following ``schedule`` ('geometric' sweeps scales log-uniformly,
    'linear' interpolates directly).
    """

    eta: np.ndarray
    n_epochs: int
    eta_floor: float = 1e-5
    eps: float = 1e-3
    schedule: str = "geometric"

    def __post_init__(self):
        object.__setattr__(self, "eta",
                           np.atleast_1d(np.asarray(self.eta, dtype=np.float64)))
        if np.any(self.eta <= 0) or self.eta_floor <= 0:
            raise ValueError("learning rates must be > 0")
        if self.eps <= 0:
            raise ValueError("finite-difference step must be > 0")
        if self.schedule not in ("linear", "geometric"):
            raise ValueError(f"unknown schedule {self.schedule!r}")


@dataclass(frozen=True)
class MIncrementSeries:
    """One epoch's K discretized martingale increments."""

    increments: np.ndarray


def learning_rates(settings: LearnSettings, epoch: int) -> np.ndarray:
    """Per-parameter rates at a given epoch under the decay schedule."""
    n = max(settings.n_epochs - 1, 1)
    frac = min(max(epoch, 0), n) / n
    if settings.schedule == "linear":
        return settings.eta + (settings.eta_floor - settings.eta) * frac
    return settings.eta * (settings.eta_floor / settings.eta) ** frac


def central_diff(f, x: float, eps: float) -> float:
    """(f(x+eps) - f(x-eps)) / (2 eps); exact for quadratics."""
    if eps <= 0:
        raise ValueError("eps must be > 0")
    return (f(x + eps) - f(x - eps)) / (2.0 * eps)


def _gather(grids: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    # grids: (B, K+1, l); alphas: (K+1,) 1-based -> (B, K+1)
    k_idx = np.arange(grids.shape[1])
    return grids[:, k_idx, alphas - 1]


def path_values(P, H, C, D, X, alphas, target: InvestmentTarget) -> np.ndarray:
    """Value function along a path for a batch of coefficient sets.

    Arrays are (B, K+1, l); returns (B, K+1).
    """
    dz = target.lam - target.z
    y = X[None, :] + dz * _gather(H, alphas)
    return (_gather(P, alphas) * y * y + dz * dz * _gather(C, alphas)
            + _gather(D, alphas) - target.lam ** 2)


def entropy_terms(P, sigma, alphas, xi: float, dt: float) -> np.ndarray:
    """Accumulated exploration cost per step: (xi/2) log(pi e xi / (sigma^2 P)) dt.

    ``P`` is (B, K+1, l), ``sigma`` (B, l); uses the regime occupied at the
    left endpoint of each step.  Returns (B, K).  Zero when xi == 0.
    """
    b, k1, _ = P.shape
    if xi <= 0.0:
        return np.zeros((b, k1 - 1))
    p_path = _gather(P, alphas)[:, :-1]
    s_path = sigma[:, alphas[:-1] - 1]
    return 0.5 * xi * np.log(np.pi * np.e * xi / (s_path * s_path * p_path)) * dt


def _increments_from_arrays(P, H, C, D, X, alphas, sigma, target, dt):
    v = path_values(P, H, C, D, X, alphas, target)
    ent = entropy_terms(P, sigma, alphas, target.xi, dt)
    return np.diff(v, axis=1) - ent


def _solve_stack(theta: MarketParams, gen, grid, xi):
    fp, fh, fc, fd = solve_phcd_arrays(theta.sigma[None, :], theta.rho[None, :],
                                       theta.r, gen, grid, xi)
    s = grid.substeps
    return fp[:, ::s], fh[:, ::s], fc[:, ::s], fd[:, ::s]


def _coeff_arrays(coeffs: ValueCoefficients):
    return (coeffs.P[None], coeffs.H[None], coeffs.C[None], coeffs.D[None])


def m_increments(path, coeffs: ValueCoefficients, theta: MarketParams,
                 target: InvestmentTarget) -> MIncrementSeries:
    """Discretized martingale increments along one epoch path.

    increment_k = V(t_{k+1}, X_{k+1}, a_{k+1}) - V(t_k, X_k, a_k)
                  - (xi/2) log(pi e xi / (sigma_{a_k}^2 P(t_k, a_k))) dt.
    """
    inc = _increments_from_arrays(*_coeff_arrays(coeffs), path.X, path.alphas,
                                  theta.sigma[None, :], target, coeffs.grid.dt)
    return MIncrementSeries(increments=inc[0])


def td_loss(path, coeffs: ValueCoefficients, theta: MarketParams,
            target: InvestmentTarget) -> float:
    """Realized TD loss: (1/2) sum_k (increment_k / dt)^2 dt."""
    dt = coeffs.grid.dt
    inc = m_increments(path, coeffs, theta, target).increments
    return float(0.5 * np.sum((inc / dt) ** 2) * dt)


def perturbed_thetas(theta: MarketParams, eps: float) -> np.ndarray:
    """Stack of parameter vectors: base, then (j+, j-) for each parameter."""
    base = theta.theta
    n = len(base)
    stack = np.tile(base, (2 * n + 1, 1))
    for j in range(n):
        stack[1 + 2 * j, j] += eps
        stack[2 + 2 * j, j] -= eps
    return stack


def oc_losses(path, theta: MarketParams, target: InvestmentTarget,
              grid: TimeGrid, gen: GeneratorMatrix,
              eps: float, coeff_stack=None) -> np.ndarray:
    """OC loss for every learned parameter in one batched solve.

    The weight for parameter j is the central-difference sensitivity of the
    value function, evaluated at the left endpoint of each step.
    """
    stack = perturbed_thetas(theta, eps)
    n = len(theta.theta)
    l = theta.l
    if coeff_stack is None:
        fp, fh, fc, fd = solve_phcd_arrays(stack[:, :l], stack[:, l:], theta.r,
                                           gen, grid, target.xi)
        s = grid.substeps
        coeff_stack = (fp[:, ::s], fh[:, ::s], fc[:, ::s], fd[:, ::s])
    P, H, C, D = coeff_stack
    v = path_values(P, H, C, D, path.X, path.alphas, target)
    inc = _increments_from_arrays(P[:1], H[:1], C[:1], D[:1], path.X,
                                  path.alphas, theta.sigma[None, :], target,
                                  grid.dt)[0]
    out = np.empty(n)
    for j in range(n):
        zeta = (v[1 + 2 * j, :-1] - v[2 + 2 * j, :-1]) / (2.0 * eps)
        out[j] = np.sum(zeta * inc)
    return out


def oc_loss(j: int, path, coeffs: ValueCoefficients, theta: MarketParams,
            target: InvestmentTarget, grid: TimeGrid,
            gen: GeneratorMatrix, eps: float = 1e-3) -> float:
    """OC loss for parameter j (1-based): sum_k dV/dtheta_j (t_k) * increment_k."""
    n = len(theta.theta)
    if not 1 <= j <= n:
        raise ValueError(f"parameter index must be in 1..{n}, got {j}")
    return float(oc_losses(path, theta, target, grid, gen, eps)[j - 1])


def td_losses_perturbed(path, theta: MarketParams, target: InvestmentTarget,
                        grid: TimeGrid, gen: GeneratorMatrix,
                        eps: float) -> np.ndarray:
    """TD loss at theta and at every (j+, j-) probe; order as perturbed_thetas."""
    stack = perturbed_thetas(theta, eps)
    l = theta.l
    fp, fh, fc, fd = solve_phcd_arrays(stack[:, :l], stack[:, l:], theta.r,
                                       gen, grid, target.xi)
    s = grid.substeps
    P, H, C, D = fp[:, ::s], fh[:, ::s], fc[:, ::s], fd[:, ::s]
    inc = _increments_from_arrays(P, H, C, D, path.X, path.alphas,
                                  stack[:, :l], target, grid.dt)
    return 0.5 * np.sum((inc / grid.dt) ** 2, axis=1) * grid.dt


def td_gradients(path, theta: MarketParams, target: InvestmentTarget,
                 grid: TimeGrid, gen: GeneratorMatrix, eps: float) -> np.ndarray:
    """Central-difference TD gradient for every learned parameter."""
    losses = td_losses_perturbed(path, theta, target, grid, gen, eps)
    n = len(theta.theta)
    return np.array([(losses[1 + 2 * j] - losses[2 + 2 * j]) / (2.0 * eps)
                     for j in range(n)])


def td_gradient(j: int, path, theta: MarketParams, target: InvestmentTarget,
                grid: TimeGrid, gen: GeneratorMatrix, eps: float = 1e-3) -> float:
    """TD-loss gradient for parameter j (1-based) by central difference."""
    n = len(theta.theta)
    if not 1 <= j <= n:
        raise ValueError(f"parameter index must be in 1..{n}, got {j}")
    return float(td_gradients(path, theta, target, grid, gen, eps)[j - 1])


def apply_update(theta: MarketParams, kind: str, signals: np.ndarray,
                 settings: LearnSettings, epoch: int) -> MarketParams:
    """One parameter update, clamped to the configured bounds.

    TD descends the gradient (theta_j -= eta_j * signal_j); OC is a
    stochastic-approximation root-finding step (theta_j += eta_j * signal_j,
    no negation).
    """
    signals = np.asarray(signals, dtype=np.float64)
    if signals.shape != theta.theta.shape:
        raise ValueError("one signal per learned parameter required")
    eta = learning_rates(settings, epoch)
    if kind == "td":
        new = theta.theta - eta * signals
    elif kind == "oc":
        new = theta.theta + eta * signals
    else:
        raise ValueError(f"unknown update kind {kind!r}")
    l = theta.l
    new[:l] = np.clip(new[:l], *theta.sigma_bounds)
    new[l:] = np.clip(new[l:], *theta.rho_bounds)
    return theta.with_theta(new)


def m_drift(theta: MarketParams, theta_true: MarketParams,
            coeffs: ValueCoefficients, k: int, x: float, i: int,
            target: InvestmentTarget, gen: GeneratorMatrix) -> float:
    """Analytic drift of the martingale process at (t_k, x, i).

    Groups the instantaneous drift into four factors whose coefficient
    brackets vanish by the respective ODEs; the quadratic bracket retains
    the mismatch between learned and true parameters, so the drift is zero
    at the truth.  Coefficient time-derivatives come from the ODE
    right-hand sides.
    """
    i0 = i - 1
    p_row = coeffs.P[k][None]
    h_row = coeffs.H[k][None]
    c_row = coeffs.C[k][None]
    d_row = coeffs.D[k][None]
    dp, dh, dc, dd = _rhs(p_row, h_row, c_row, d_row, theta.sigma[None],
                          theta.rho[None], theta.r, gen.q.T, target.xi)
    p, h, c, d = coeffs.P[k], coeffs.H[k], coeffs.C[k], coeffs.D[k]
    q_i = gen.q[i0]
    s, rho = theta.sigma[i0], theta.rho[i0]
    st, rt = theta_true.sigma[i0], theta_true.rho[i0]
    ri = theta.r[i0]
    dz = target.lam - target.z
    y = x + dz * h[i0]

    b1 = (dp[0, i0] + p[i0] * st * st * rho * rho / (s * s)
          - 2.0 * p[i0] * rt * st * rho / s + 2.0 * p[i0] * ri
          + float(q_i @ p))
    b2 = dh[0, i0] - ri * h[i0] + float(q_i @ (p * (h - h[i0]))) / p[i0]
    b3 = dc[0, i0] + float(q_i @ (p * (h - h[i0]) ** 2 + c))
    ent = (0.5 * target.xi * np.log(np.pi * target.xi / (s * s * p[i0]))
           if target.xi > 0 else 0.0)
    b4 = dd[0, i0] + float(q_i @ d) - ent
    return float(b1 * y * y + b2 * 2.0 * dz * p[i0] * y + b3 * dz * dz + b4)
