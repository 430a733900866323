"""Pure-numpy backend for the backward coefficient solver.

Reference implementation of the same fixed-step RK4 scheme as the compiled
extension; selected at import time when the extension is unavailable or
``EMVRS_FORCE_NUMPY`` is set.  Vectorized over a batch of parameter vectors
so that one training epoch (base parameters plus all central-difference
probes) costs a single sweep.
"""
from __future__ import annotations

import numpy as np

from ..errors import NumericalDomainError


def _rhs(p, h, c, d, sigma, rho, r, qT, xi):
    """Time derivatives of (P, H, C, D); all arrays shaped (batch, l)."""
    qp = p @ qT
    qph = (p * h) @ qT - h * qp
    dp = (rho * rho - 2.0 * r) * p - qp
    dh = r * h - qph / p
    # sum_j q_ij P_j (H_j - H_i)^2 expanded so the whole row is one matmul
    qph2 = (p * h * h) @ qT - 2.0 * h * ((p * h) @ qT) + (h * h) * qp
    dc = -(qph2 + c @ qT)
    if xi > 0.0:
        dd = 0.5 * xi * (np.log(np.pi * xi) - np.log(sigma * sigma * p)) - d @ qT
    else:
        dd = -(d @ qT)
    return dp, dh, dc, dd


def solve_coefficient_grids(sigma, rho, r, q, dt, n_steps, substeps, xi):
    """Integrate the coefficient system backward from the horizon.

    Parameters
    ----------
    sigma, rho : (batch, l) float64
        Per-regime volatility and Sharpe-ratio parameters, one row per
        parameter vector to solve.
    r : (l,) float64
        Per-regime risk-free rates (shared across the batch).
    q : (l, l) float64
        Markov generator of the regime chain.
    dt : float
        Rebalancing step; the refined integration step is ``dt/substeps``.
    n_steps, substeps : int
        Rebalancing step count K and refinement factor per step.
    xi : float
        Exploration weight (0 switches the exploration-cost term off).

    Returns
    -------
    P, H, C, D : (batch, n_steps*substeps + 1, l) float64
        Values on the refined grid; index 0 is t=0, the last index is t=T.
        Terminal conditions are (1, 1, 0, 0).
    """
    sigma = np.ascontiguousarray(sigma, dtype=np.float64)
    rho = np.ascontiguousarray(rho, dtype=np.float64)
    r = np.ascontiguousarray(r, dtype=np.float64)
    qT = np.ascontiguousarray(q, dtype=np.float64).T
    batch, l = sigma.shape
    nf = n_steps * substeps
    step = -dt / substeps

    P = np.empty((batch, nf + 1, l))
    H = np.empty_like(P)
    C = np.empty_like(P)
    D = np.empty_like(P)
    p = np.ones((batch, l))
    h = np.ones((batch, l))
    c = np.zeros((batch, l))
    d = np.zeros((batch, l))
    P[:, nf] = p
    H[:, nf] = h
    C[:, nf] = c
    D[:, nf] = d

    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        for m in range(nf, 0, -1):
            k1 = _rhs(p, h, c, d, sigma, rho, r, qT, xi)
            y = (p + 0.5 * step * k1[0], h + 0.5 * step * k1[1],
                 c + 0.5 * step * k1[2], d + 0.5 * step * k1[3])
            k2 = _rhs(*y, sigma, rho, r, qT, xi)
            y = (p + 0.5 * step * k2[0], h + 0.5 * step * k2[1],
                 c + 0.5 * step * k2[2], d + 0.5 * step * k2[3])
            k3 = _rhs(*y, sigma, rho, r, qT, xi)
            y = (p + step * k3[0], h + step * k3[1],
                 c + step * k3[2], d + step * k3[3])
            k4 = _rhs(*y, sigma, rho, r, qT, xi)
            w = step / 6.0
            p = p + w * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
            h = h + w * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
            c = c + w * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
            d = d + w * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3])
            if not np.all(p > 0.0):
                bad = np.argwhere(~(p > 0.0))[0]
                t_bad = (m - 1) * dt / substeps
                raise NumericalDomainError(
                    f"P(t={t_bad:.6g}, regime={bad[1] + 1}) <= 0 during backward"
                    f" integration (batch row {bad[0]})"
                )
            idx = m - 1
            P[:, idx] = p
            H[:, idx] = h
            C[:, idx] = c
            D[:, idx] = d

    if not (np.all(np.isfinite(P)) and np.all(np.isfinite(H))
            and np.all(np.isfinite(C)) and np.all(np.isfinite(D))):
        raise NumericalDomainError("non-finite coefficient values produced")
    return P, H, C, D
