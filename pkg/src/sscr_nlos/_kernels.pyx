# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled accumulation kernels.

Same contracts as ``_kernels_py``; fused single-threaded loops over the
per-pair (voxel, bin, weight) tables and the per-bin cubic solves.
"""

import numpy as np

from libc.math cimport fabs, sqrt

BACKEND = "compiled"


def forward_apply(const double[::1] u_flat, const long long[::1] vox, const long long[::1] bins,
                  const double[::1] weights, const long long[::1] offsets, double[:, ::1] out):
    cdef Py_ssize_t p, n
    for p in range(out.shape[0]):
        for n in range(offsets[p], offsets[p + 1]):
            out[p, bins[n]] += u_flat[vox[n]] * weights[n]
    return np.asarray(out)


def adjoint_apply(const double[:, ::1] tau, const long long[::1] vox, const long long[::1] bins,
                  const double[::1] weights, const long long[::1] offsets, double[::1] out_flat):
    cdef Py_ssize_t p, n
    for p in range(tau.shape[0]):
        for n in range(offsets[p], offsets[p + 1]):
            out_flat[vox[n]] += tau[p, bins[n]] * weights[n]
    return np.asarray(out_flat)


cdef double _interior_root(double d, double n, double m, double sv,
                           double poly_tol, int max_iter) nogil:
    cdef double s1 = sv + 1.0
    cdef double lin = sv - n / (2.0 * m)
    cdef double con = d / (2.0 * m)
    cdef double eps = 1e-15
    cdef double lo = eps
    cdef double hi = 1.0 - eps
    cdef double x = sv
    cdef double px, dpx, xn
    cdef int it
    if x < 0.25:
        x = 0.25
    elif x > 0.75:
        x = 0.75
    for it in range(max_iter):
        px = ((x - s1) * x + lin) * x + con
        if fabs(px) <= poly_tol:
            break
        if px > 0.0:
            lo = x
        else:
            hi = x
        dpx = (3.0 * x - 2.0 * s1) * x + lin
        if dpx != 0.0:
            xn = x - px / dpx
        else:
            xn = 0.5 * (lo + hi)
        if not (lo < xn < hi):
            xn = 0.5 * (lo + hi)
        x = xn
    return x


def solve_bins(const double[::1] counts, pulses, const double[::1] mu, const double[::1] s,
               double[::1] out, double poly_tol=1e-12, int max_iter=200):
    cdef double n = <double> pulses
    cdef Py_ssize_t i
    cdef double d, m, sv, root
    for i in range(counts.shape[0]):
        d = counts[i]
        m = mu[i]
        sv = s[i]
        if d == 0.0:
            root = 1.0 - 0.5 * ((1.0 - sv) + sqrt((1.0 - sv) * (1.0 - sv) + 2.0 * n / m))
            out[i] = root if root > 0.0 else 0.0
        elif d == n:
            root = 0.5 * (sv + sqrt(sv * sv + 2.0 * n / m))
            out[i] = root if root < 1.0 else 1.0
        else:
            out[i] = _interior_root(d, n, m, sv, poly_tol, max_iter)
    return np.asarray(out)
