# cython: language_level=3
"""Compiled backend for the backward coefficient solver.

Same fixed-step RK4 scheme as ``_ode_numpy`` with scalar C loops; this is
the hot kernel of training (thousands of epochs, each solving the system
for the base parameters and every central-difference probe).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport log

from ..errors import NumericalDomainError

cnp.import_array()

cdef double PI = 3.141592653589793


cdef inline void _rhs(double* p, double* h, double* c, double* d,
                      double* sig, double* rho, double* r,
                      double* q, int l, double xi,
                      double* dp, double* dh, double* dc, double* dd,
                      bint* ok) noexcept:
    cdef int i, j
    cdef double qp, qph, qph2, qc, qd, hd
    for i in range(l):
        if p[i] <= 0.0:
            ok[0] = False
            return
        qp = 0.0
        qph = 0.0
        qph2 = 0.0
        qc = 0.0
        qd = 0.0
        for j in range(l):
            qp += q[i * l + j] * p[j]
            hd = h[j] - h[i]
            qph += q[i * l + j] * p[j] * hd
            qph2 += q[i * l + j] * (p[j] * hd * hd + c[j])
            qd += q[i * l + j] * d[j]
        dp[i] = (rho[i] * rho[i] - 2.0 * r[i]) * p[i] - qp
        dh[i] = r[i] * h[i] - qph / p[i]
        dc[i] = -qph2
        if xi > 0.0:
            dd[i] = 0.5 * xi * (log(PI * xi) - log(sig[i] * sig[i] * p[i])) - qd
        else:
            dd[i] = -qd


def solve_coefficient_grids(sigma, rho, r, q, double dt, int n_steps,
                            int substeps, double xi):
    """See ``emvrs._kernels._ode_numpy.solve_coefficient_grids``."""
    cdef cnp.ndarray[double, ndim=2] sig_a = np.ascontiguousarray(sigma, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] rho_a = np.ascontiguousarray(rho, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] r_a = np.ascontiguousarray(r, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] q_a = np.ascontiguousarray(q, dtype=np.float64)
    cdef int batch = sig_a.shape[0]
    cdef int l = sig_a.shape[1]
    cdef int nf = n_steps * substeps
    cdef double step = -dt / substeps

    cdef cnp.ndarray[double, ndim=3] P = np.empty((batch, nf + 1, l))
    cdef cnp.ndarray[double, ndim=3] H = np.empty((batch, nf + 1, l))
    cdef cnp.ndarray[double, ndim=3] C = np.empty((batch, nf + 1, l))
    cdef cnp.ndarray[double, ndim=3] D = np.empty((batch, nf + 1, l))

    # state + 4 RK stages + stage input, for each of the 4 quantities
    cdef cnp.ndarray[double, ndim=1] work = np.empty(24 * l)
    cdef double* w = &work[0]
    cdef double* p = w
    cdef double* h = w + l
    cdef double* c = w + 2 * l
    cdef double* d = w + 3 * l
    cdef double* yp = w + 4 * l
    cdef double* yh = w + 5 * l
    cdef double* yc = w + 6 * l
    cdef double* yd = w + 7 * l
    cdef double* k1 = w + 8 * l
    cdef double* k2 = w + 12 * l
    cdef double* k3 = w + 16 * l
    cdef double* k4 = w + 20 * l

    cdef double* sig_p
    cdef double* rho_p
    cdef double* r_p = &r_a[0]
    cdef double* q_p = &q_a[0, 0]
    cdef int b, m, i
    cdef double half = 0.5 * step
    cdef double w6 = step / 6.0
    cdef bint ok = True
    cdef int bad_step = -1

    for b in range(batch):
        sig_p = &sig_a[b, 0]
        rho_p = &rho_a[b, 0]
        for i in range(l):
            p[i] = 1.0
            h[i] = 1.0
            c[i] = 0.0
            d[i] = 0.0
            P[b, nf, i] = 1.0
            H[b, nf, i] = 1.0
            C[b, nf, i] = 0.0
            D[b, nf, i] = 0.0
        for m in range(nf, 0, -1):
            _rhs(p, h, c, d, sig_p, rho_p, r_p, q_p, l, xi,
                 k1, k1 + l, k1 + 2 * l, k1 + 3 * l, &ok)
            if not ok:
                bad_step = m
                break
            for i in range(l):
                yp[i] = p[i] + half * k1[i]
                yh[i] = h[i] + half * k1[l + i]
                yc[i] = c[i] + half * k1[2 * l + i]
                yd[i] = d[i] + half * k1[3 * l + i]
            _rhs(yp, yh, yc, yd, sig_p, rho_p, r_p, q_p, l, xi,
                 k2, k2 + l, k2 + 2 * l, k2 + 3 * l, &ok)
            if not ok:
                bad_step = m
                break
            for i in range(l):
                yp[i] = p[i] + half * k2[i]
                yh[i] = h[i] + half * k2[l + i]
                yc[i] = c[i] + half * k2[2 * l + i]
                yd[i] = d[i] + half * k2[3 * l + i]
            _rhs(yp, yh, yc, yd, sig_p, rho_p, r_p, q_p, l, xi,
                 k3, k3 + l, k3 + 2 * l, k3 + 3 * l, &ok)
            if not ok:
                bad_step = m
                break
            for i in range(l):
                yp[i] = p[i] + step * k3[i]
                yh[i] = h[i] + step * k3[l + i]
                yc[i] = c[i] + step * k3[2 * l + i]
                yd[i] = d[i] + step * k3[3 * l + i]
            _rhs(yp, yh, yc, yd, sig_p, rho_p, r_p, q_p, l, xi,
                 k4, k4 + l, k4 + 2 * l, k4 + 3 * l, &ok)
            if not ok:
                bad_step = m
                break
            for i in range(l):
                p[i] += w6 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                h[i] += w6 * (k1[l + i] + 2.0 * k2[l + i] + 2.0 * k3[l + i] + k4[l + i])
                c[i] += w6 * (k1[2 * l + i] + 2.0 * k2[2 * l + i] + 2.0 * k3[2 * l + i] + k4[2 * l + i])
                d[i] += w6 * (k1[3 * l + i] + 2.0 * k2[3 * l + i] + 2.0 * k3[3 * l + i] + k4[3 * l + i])
            for i in range(l):
                if not (p[i] > 0.0):
                    ok = False
                    bad_step = m - 1
                    break
                P[b, m - 1, i] = p[i]
                H[b, m - 1, i] = h[i]
                C[b, m - 1, i] = c[i]
                D[b, m - 1, i] = d[i]
            if not ok:
                break
        if not ok:
            t_bad = bad_step * dt / substeps
            for i in range(l):
                if not (p[i] > 0.0):
                    break
            raise NumericalDomainError(
                f"P(t={t_bad:.6g}, regime={i + 1}) <= 0 during backward"
                f" integration (batch row {b})"
            )

    out = (P, H, C, D)
    for arr in out:
        if not np.all(np.isfinite(arr)):
            raise NumericalDomainError("non-finite coefficient values produced")
    return out
