"""Gaussian investment policies and value-function evaluation.

The optimal policy is a Gaussian over the amount invested in the risky
asset; its mean coincides with the classical (non-exploratory) optimal
control and its variance is proportional to the exploration weight.
Feasibility constraints (leverage cap, short-selling ban) are applied at
sampling time by clipping.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvexityError, DegenerateConfigurationError, NumericalDomainError
from .odes import ValueCoefficients
from .rng import as_generator

SIGMA_BOUNDS_DEFAULT = (0.1, 1.0)
RHO_BOUNDS_DEFAULT = (-2.0, 2.0)


@dataclass(frozen=True)
class MarketParams:
    """Learnable market parameters plus fixed rates and clamp bounds.

    ``sigma`` and ``rho`` are per-regime volatilities and Sharpe ratios (the
    learned vector, in that order); ``r`` are the per-regime risk-free
    rates.  Bounds are enforced by the update step, not here, so that
    finite-difference probes may step slightly outside them.
    """

    sigma: np.ndarray
    rho: np.ndarray
    r: np.ndarray
    sigma_bounds: tuple = SIGMA_BOUNDS_DEFAULT
    rho_bounds: tuple = RHO_BOUNDS_DEFAULT

    def __post_init__(self):
        for name in ("sigma", "rho", "r"):
            object.__setattr__(self, name,
                               np.atleast_1d(np.asarray(getattr(self, name),
                                                        dtype=np.float64)))
        if not (len(self.sigma) == len(self.rho) == len(self.r)):
            raise ValueError("sigma, rho and r must have one entry per regime")
        if np.any(self.sigma <= 0.0):
            raise ValueError(f"volatilities must be > 0, got {self.sigma}")

    @property
    def l(self) -> int:
        return len(self.sigma)

    @property
    def theta(self) -> np.ndarray:
        """The learned parameter vector (sigma_1..sigma_l, rho_1..rho_l)."""
        return np.concatenate([self.sigma, self.rho])

    def with_theta(self, theta: np.ndarray) -> "MarketParams":
        theta = np.asarray(theta, dtype=np.float64)
        l = self.l
        return MarketParams(sigma=theta[:l].copy(), rho=theta[l:].copy(),
                            r=self.r, sigma_bounds=self.sigma_bounds,
                            rho_bounds=self.rho_bounds)

    def validate_bounds(self) -> "MarketParams":
        lo_s, hi_s = self.sigma_bounds
        lo_r, hi_r = self.rho_bounds
        if np.any(self.sigma < lo_s) or np.any(self.sigma > hi_s):
            raise ValueError(f"sigma {self.sigma} outside bounds {self.sigma_bounds}")
        if np.any(self.rho < lo_r) or np.any(self.rho > hi_r):
            raise ValueError(f"rho {self.rho} outside bounds {self.rho_bounds}")
        return self


@dataclass(frozen=True)
class InvestmentTarget:
    """Initial wealth, terminal target, exploration weight and multiplier."""

    x0: float
    z: float
    xi: float
    lam: float = 0.0

    def __post_init__(self):
        if self.x0 <= 0 or self.z <= 0:
            raise ValueError("x0 and z must be positive")
        if self.xi < 0:
            raise ValueError("xi must be >= 0 (0 disables exploration)")

    def with_lambda(self, lam: float) -> "InvestmentTarget":
        return InvestmentTarget(self.x0, self.z, self.xi, float(lam))


@dataclass(frozen=True)
class GaussianPolicy:
    """Gaussian distribution over the currency amount held in the risky asset."""

    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError(f"policy variance must be > 0, got {self.variance}")

    def entropy(self) -> float:
        return 0.5 * np.log(2.0 * np.pi * np.e * self.variance)


def value_function(coeffs: ValueCoefficients, k: int, x: float, i: int,
                   target: InvestmentTarget) -> float:
    """Value at time index k, wealth x, regime i (1-based).

    V = P(t_k,i) [x + (lam - z) H(t_k,i)]^2 + (lam - z)^2 C(t_k,i)
        + D(t_k,i) - lam^2.
    """
    dz = target.lam - target.z
    y = x + dz * coeffs.H[k, i - 1]
    return float(coeffs.P[k, i - 1] * y * y + dz * dz * coeffs.C[k, i - 1]
                 + coeffs.D[k, i - 1] - target.lam ** 2)


def optimal_lambda(coeffs: ValueCoefficients, x0: float, i0: int,
                   z: float) -> float:
    """Stationary point of V(0, x0, i0, .) in the multiplier.

    lam* = (z - P(0,i0) H(0,i0) x0) / (P(0,i0) H(0,i0)^2 + C(0,i0) - 1) + z.
    """
    p0 = coeffs.P[0, i0 - 1]
    h0 = coeffs.H[0, i0 - 1]
    c0 = coeffs.C[0, i0 - 1]
    den = p0 * h0 * h0 + c0 - 1.0
    if abs(den) < 1e-12:
        raise DegenerateConfigurationError(
            f"optimal multiplier undefined: P H^2 + C - 1 = {den:.3e} at regime {i0}")
    return float((z - p0 * h0 * x0) / den + z)


def pit_policy(vx: float, vxx: float, theta: MarketParams, i: int,
               xi: float) -> GaussianPolicy:
    """Improved policy built from value-function derivatives.

    mean = -rho_i vx / (sigma_i vxx), variance = xi / (sigma_i^2 vxx);
    requires vxx > 0.
    """
    if not vxx > 0:
        raise ConvexityError(f"second wealth-derivative must be > 0, got {vxx}")
    s = theta.sigma[i - 1]
    return GaussianPolicy(mean=-theta.rho[i - 1] * vx / (s * vxx),
                          variance=xi / (s * s * vxx))


def policy_distribution(coeffs: ValueCoefficients, theta: MarketParams, k: int,
                        x: float, i: int, target: InvestmentTarget) -> GaussianPolicy:
    """Optimal Gaussian policy at (t_k, x, i).

    Defined through ``pit_policy`` applied to the derivatives of the
    quadratic value function (vx = 2P y, vxx = 2P), which guarantees the two
    operations agree bit-for-bit.
    """
    p = coeffs.P[k, i - 1]
    if not p > 0:
        raise NumericalDomainError(f"P(t_{k}, regime={i}) = {p} is not positive")
    y = x + (target.lam - target.z) * coeffs.H[k, i - 1]
    return pit_policy(vx=2.0 * p * y, vxx=2.0 * p, theta=theta, i=i,
                      xi=target.xi)


def classical_control(coeffs: ValueCoefficients, theta: MarketParams, k: int,
                      x: float, i: int, target: InvestmentTarget) -> float:
    """Non-exploratory optimal amount; equals the policy mean exactly."""
    xi = target.xi if target.xi > 0 else 1.0  # variance must exist; mean is xi-free
    t = target if target.xi > 0 else InvestmentTarget(target.x0, target.z, xi, target.lam)
    return policy_distribution(coeffs, theta, k, x, i, t).mean


def sample_action(pol: GaussianPolicy, constraint: float, short_selling: bool,
                  x0: float, seed) -> float:
    """Draw an amount from the policy and clip it to the feasible interval.

    The interval is [-c x0, c x0] when short selling is allowed, otherwise
    [0, c x0].  Deterministic under a fixed seed.
    """
    if constraint <= 0:
        raise ValueError(f"action constraint must be > 0, got {constraint}")
    rng = as_generator(seed)
    u = pol.mean + np.sqrt(pol.variance) * rng.standard_normal()
    lo = -constraint * x0 if short_selling else 0.0
    return float(np.clip(u, lo, constraint * x0))
