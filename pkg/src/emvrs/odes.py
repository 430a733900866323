"""Backward-in-time solution of the value-function coefficient system.

Four coefficient families parameterize the optimal value function on a
(time, regime) grid: the quadratic weight P, the discount factor H, the
regime-coupling cost C and the exploration cost D.  They satisfy a coupled
ODE system with terminal conditions P(T)=H(T)=1, C(T)=D(T)=0 and are
integrated backward with fixed-step RK4 on a refined grid (``substeps``
subdivisions per rebalancing interval).

Besides the main solver this module provides two independent cross-checks:
the single-regime closed forms and the occupation-measure integral forms of
C and D evaluated by quadrature.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from . import _kernels
from .regimes import GeneratorMatrix, transition_matrix

if TYPE_CHECKING:  # pragma: no cover
    from .policy import MarketParams


@dataclass(frozen=True)
class TimeGrid:
    """Uniform rebalancing grid over [0, T] with an ODE refinement factor."""

    T: float
    dt: float
    substeps: int = 10

    def __post_init__(self):
        if self.T <= 0 or self.dt <= 0:
            raise ValueError("T and dt must be positive")
        k = round(self.T / self.dt)
        if k < 1 or abs(self.T - k * self.dt) > 1e-12:
            raise ValueError(
                f"T={self.T} is not an integer multiple of dt={self.dt}")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")

    @property
    def K(self) -> int:
        return round(self.T / self.dt)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.K + 1) * self.dt

    @property
    def fine_times(self) -> np.ndarray:
        n = self.K * self.substeps
        return np.arange(n + 1) * (self.dt / self.substeps)


@dataclass
class ValueCoefficients:
    """P, H, C, D on the rebalancing grid, shape (K+1, l) each.

    ``fine_*`` retain the refined-grid solution for quadrature cross-checks
    and debugging dumps.
    """

    grid: TimeGrid
    P: np.ndarray
    H: np.ndarray
    C: np.ndarray
    D: np.ndarray
    fine_P: np.ndarray | None = None
    fine_H: np.ndarray | None = None
    fine_C: np.ndarray | None = None
    fine_D: np.ndarray | None = None

    @property
    def l(self) -> int:
        return self.P.shape[1]

    def to_csv(self, path) -> None:
        """Dump the grid values as rows (t, regime, P, H, C, D)."""
        times = self.grid.times
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "regime", "P", "H", "C", "D"])
            for k, t in enumerate(times):
                for i in range(self.l):
                    w.writerow([f"{t:.17g}", i + 1,
                                f"{self.P[k, i]:.17g}", f"{self.H[k, i]:.17g}",
                                f"{self.C[k, i]:.17g}", f"{self.D[k, i]:.17g}"])


def solve_phcd_arrays(sigma, rho, r, gen: GeneratorMatrix, grid: TimeGrid,
                      xi: float):
    """Batched solve on raw parameter arrays; returns fine-grid stacks.

    ``sigma``/``rho`` have shape (batch, l).  Returns four arrays of shape
    (batch, K*substeps + 1, l).  Used directly by the training loops, which
    solve the base parameters and all finite-difference probes in one call.
    """
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    rho = np.atleast_2d(np.asarray(rho, dtype=np.float64))
    if np.any(sigma <= 0.0):
        raise ValueError("all volatilities must be > 0")
    return _kernels.solve_coefficient_grids(
        sigma, rho, np.asarray(r, dtype=np.float64), gen.q,
        grid.dt, grid.K, grid.substeps, xi)


def solve_phcd(theta: "MarketParams", gen: GeneratorMatrix, grid: TimeGrid,
               xi: float) -> ValueCoefficients:
    """Solve the coupled system for one parameter vector.

    P and H close among themselves; C consumes P and H; D consumes P.  The
    whole system is integrated jointly so a single backward sweep yields all
    four families.
    """
    fp, fh, fc, fd = solve_phcd_arrays(theta.sigma[None, :], theta.rho[None, :],
                                       theta.r, gen, grid, xi)
    s = grid.substeps
    return ValueCoefficients(
        grid=grid,
        P=fp[0, ::s].copy(), H=fh[0, ::s].copy(),
        C=fc[0, ::s].copy(), D=fd[0, ::s].copy(),
        fine_P=fp[0], fine_H=fh[0], fine_C=fc[0], fine_D=fd[0],
    )


def emv_closed_form(sigma: float, rho: float, r: float, xi: float,
                    grid: TimeGrid) -> ValueCoefficients:
    """Single-regime closed forms evaluated on the grid.

    P(t) = exp(-(rho^2 - 2r)(T-t)), H(t) = exp(-r(T-t)), C = 0 and
    D(t) = xi(rho^2-2r)(T^2-t^2)/4
           - (xi/2)[(rho^2-2r)T - log(sigma^2/(pi*xi))](T-t).
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")

    def eval_on(times):
        tau = grid.T - times
        a = rho * rho - 2.0 * r
        p = np.exp(-a * tau)
        h = np.exp(-r * tau)
        c = np.zeros_like(p)
        d = (xi * a / 4.0 * (grid.T ** 2 - times ** 2)
             - 0.5 * xi * (a * grid.T - np.log(sigma ** 2 / (np.pi * xi))) * tau)
        return p[:, None], h[:, None], c[:, None], d[:, None]

    p, h, c, d = eval_on(grid.times)
    fp, fh, fc, fd = eval_on(grid.fine_times)
    return ValueCoefficients(grid=grid, P=p, H=h, C=c, D=d,
                             fine_P=fp, fine_H=fh, fine_C=fc, fine_D=fd)


def cd_integral_form(theta: "MarketParams", gen: GeneratorMatrix,
                     grid: TimeGrid, ph: ValueCoefficients, xi: float):
    """C and D via their occupation-measure integral forms.

    C(t,i) = sum_m sum_j \\int_t^T p_im(s-t) q_mj P(s,j) (H(s,j)-H(s,m))^2 ds
    and D(t,i) = -sum_m \\int_t^T p_im(s-t) (xi/2) log(pi*xi/(sigma_m^2 P(s,m))) ds,
    evaluated with composite trapezoid quadrature on the refined grid, with
    p_im taken from the transition matrix.  Exists purely as a cross-check
    of the ODE route.
    """
    if xi <= 0:
        raise ValueError("xi must be > 0")
    l = gen.l
    fine_t = grid.fine_times
    n_fine = len(fine_t) - 1
    p_grid, h_grid = ph.fine_P, ph.fine_H

    # integrands on the fine grid (regime m at each node s)
    f_c = np.empty((n_fine + 1, l))
    for m in range(l):
        diff = h_grid - h_grid[:, m:m + 1]
        f_c[:, m] = (gen.q[m] * p_grid * diff * diff).sum(axis=1)
    f_d = 0.5 * xi * np.log(np.pi * xi / (theta.sigma ** 2 * p_grid))

    # transition matrices for every lag used by the quadrature
    trans = np.empty((n_fine + 1, l, l))
    for n in range(n_fine + 1):
        trans[n] = transition_matrix(gen, fine_t[n])

    s = grid.substeps
    ds = grid.dt / grid.substeps
    c_out = np.zeros((grid.K + 1, l))
    d_out = np.zeros((grid.K + 1, l))
    for k in range(grid.K + 1):
        n0 = k * s
        lags = np.arange(n_fine - n0 + 1)
        if len(lags) < 2:
            continue
        w = np.full(len(lags), ds)
        w[0] = w[-1] = 0.5 * ds
        # sum over m of p_im(lag) * f(s, m), all i at once
        pc = np.einsum("nim,nm->ni", trans[lags], f_c[n0:])
        pd = np.einsum("nim,nm->ni", trans[lags], f_d[n0:])
        c_out[k] = w @ pc
        d_out[k] = -(w @ pd)
    return c_out, d_out
