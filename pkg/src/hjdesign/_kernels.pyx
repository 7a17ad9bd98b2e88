# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False, language_level=3
"""Compiled hot loops.

Every routine here has a line-for-line numpy twin in ``_fallback.py``;
loop orders and tie-breaking match so both backends agree to round-off.
"""

import numpy as np

from libc.math cimport INFINITY, fabs, floor, rint


cdef inline Py_ssize_t _imax(Py_ssize_t a, Py_ssize_t b) nogil:
    return a if a > b else b


cdef inline Py_ssize_t _imin(Py_ssize_t a, Py_ssize_t b) nogil:
    return a if a < b else b


def minplus_1d(const double[::1] u, const double[::1] cost, Py_ssize_t W):
    """``out[i] = min_{|j-i|<=W} u[j] + cost[j-i+W]`` and the minimizing ``j``."""
    cdef Py_ssize_t n = u.shape[0], i, j, lo, hi, bj
    cdef double best, v
    out = np.empty(n)
    arg = np.empty(n, dtype=np.intp)
    cdef double[::1] o = out
    cdef Py_ssize_t[::1] a = arg
    with nogil:
        for i in range(n):
            best = INFINITY
            bj = i
            lo = _imax(0, i - W)
            hi = _imin(n - 1, i + W)
            for j in range(lo, hi + 1):
                v = u[j] + cost[j - i + W]
                if v < best:
                    best = v
                    bj = j
            o[i] = best
            a[i] = bj
    return out, arg


def minplus_2d(const double[:, ::1] u, const double[:, ::1] cost, Py_ssize_t W):
    """Two-dimensional analogue of :func:`minplus_1d` over a square window."""
    cdef Py_ssize_t n = u.shape[0], m = u.shape[1]
    cdef Py_ssize_t i, j, p, q, plo, phi, qlo, qhi, bp, bq
    cdef double best, v
    out = np.empty((n, m))
    argi = np.empty((n, m), dtype=np.intp)
    argj = np.empty((n, m), dtype=np.intp)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t[:, ::1] ai = argi
    cdef Py_ssize_t[:, ::1] aj = argj
    with nogil:
        for i in range(n):
            plo = _imax(0, i - W)
            phi = _imin(n - 1, i + W)
            for j in range(m):
                qlo = _imax(0, j - W)
                qhi = _imin(m - 1, j + W)
                best = INFINITY
                bp = i
                bq = j
                for p in range(plo, phi + 1):
                    for q in range(qlo, qhi + 1):
                        v = u[p, q] + cost[p - i + W, q - j + W]
                        if v < best:
                            best = v
                            bp = p
                            bq = q
                o[i, j] = best
                ai[i, j] = bp
                aj[i, j] = bq
    return out, argi, argj


cdef inline double _snap(double s) nogil:
    cdef double r = rint(s)
    if fabs(s - r) < 1e-9:
        return r
    return s


cdef inline double _interp1(const double[::1] v, Py_ssize_t M, double L, double h, double x) nogil:
    cdef double s = _snap((x + L) / h)
    cdef double fl = floor(s)
    cdef Py_ssize_t k
    if fl < 0:
        fl = 0
    elif fl > M - 2:
        fl = M - 2
    k = <Py_ssize_t>fl
    cdef double t = s - fl
    return v[k] * (1.0 - t) + v[k + 1] * t


cdef inline double _interp2(const double[:, ::1] v, Py_ssize_t M, double L, double h,
                            double x, double y) nogil:
    cdef double s = _snap((x + L) / h)
    cdef double r = _snap((y + L) / h)
    cdef double fs = floor(s)
    cdef double fr = floor(r)
    if fs < 0:
        fs = 0
    elif fs > M - 2:
        fs = M - 2
    if fr < 0:
        fr = 0
    elif fr > M - 2:
        fr = M - 2
    cdef Py_ssize_t i = <Py_ssize_t>fs, j = <Py_ssize_t>fr
    cdef double a = s - fs, b = r - fr
    return (
        v[i, j] * (1 - a) * (1 - b)
        + v[i + 1, j] * a * (1 - b)
        + v[i, j + 1] * (1 - a) * b
        + v[i + 1, j + 1] * a * b
    )


def semilag_1d(const double[::1] u, double L, double h, const double[::1] disp,
               const double[:, ::1] cost):
    """``out[i] = min_k cost[i, k] + u(x_i - disp[k])`` with linear extension."""
    cdef Py_ssize_t M = u.shape[0], K = disp.shape[0], i, k, bk
    cdef double best, v, x
    out = np.empty(M)
    arg = np.empty(M, dtype=np.intp)
    cdef double[::1] o = out
    cdef Py_ssize_t[::1] a = arg
    with nogil:
        for i in range(M):
            x = -L + h * i
            best = INFINITY
            bk = 0
            for k in range(K):
                v = cost[i, k] + _interp1(u, M, L, h, x - disp[k])
                if v < best:
                    best = v
                    bk = k
            o[i] = best
            a[i] = bk
    return out, arg


def semilag_2d(const double[:, ::1] u, double L, double h, const double[:, ::1] disp,
               const double[:, ::1] cost):
    """2D analogue of :func:`semilag_1d`; ``cost`` rows are nodes in row-major order."""
    cdef Py_ssize_t M = u.shape[0], K = disp.shape[0], i, j, k, bk
    cdef double best, v, x, y
    out = np.empty((M, M))
    arg = np.empty((M, M), dtype=np.intp)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t[:, ::1] a = arg
    with nogil:
        for i in range(M):
            x = -L + h * i
            for j in range(M):
                y = -L + h * j
                best = INFINITY
                bk = 0
                for k in range(K):
                    v = cost[i * M + j, k] + _interp2(u, M, L, h, x - disp[k, 0], y - disp[k, 1])
                    if v < best:
                        best = v
                        bk = k
                o[i, j] = best
                a[i, j] = bk
    return out, arg


def hildreth_sweep_1d(double[::1] phi, double[::1] lam, double b, double omega):
    """One sweep of relaxed Hildreth/Dykstra updates over ``phi[i-1] + phi[i+1] - 2 phi[i] <= b``.

    Nodes are visited colour by colour (``i mod 3``); constraints of one
    colour touch disjoint nodes.  Returns the largest dual step.
    """
    cdef Py_ssize_t M = phi.shape[0], r, i
    cdef double viol, d, worst = 0.0
    with nogil:
        for r in range(3):
            i = r if r > 0 else 3
            while i < M - 1:
                viol = phi[i - 1] + phi[i + 1] - 2.0 * phi[i] - b
                d = omega * viol / 6.0
                if d < -lam[i]:
                    d = -lam[i]
                lam[i] += d
                phi[i - 1] -= d
                phi[i + 1] -= d
                phi[i] += 2.0 * d
                if fabs(d) > worst:
                    worst = fabs(d)
                i += 3
    return worst


def hildreth_sweep_2d(double[:, ::1] phi, double[:, :, ::1] lam, const double[::1] b,
                      const long[:, ::1] dirs, double omega):
    """2D analogue over the stencil directions ``dirs`` (shape ``(D, 2)``)."""
    cdef Py_ssize_t M = phi.shape[0], D = dirs.shape[0], d, r, i, j
    cdef Py_ssize_t e0, e1, i0, i1, j0, j1
    cdef double viol, step, worst = 0.0, bd
    with nogil:
        for d in range(D):
            e0 = dirs[d, 0]
            e1 = dirs[d, 1]
            bd = b[d]
            i0 = e0 if e0 >= 0 else -e0
            j0 = e1 if e1 >= 0 else -e1
            i1 = M - i0
            j1 = M - j0
            for r in range(3):
                if e0 != 0:
                    i = i0 + ((r - i0) % 3 + 3) % 3
                    while i < i1:
                        for j in range(j0, j1):
                            viol = phi[i + e0, j + e1] + phi[i - e0, j - e1] - 2.0 * phi[i, j] - bd
                            step = omega * viol / 6.0
                            if step < -lam[d, i, j]:
                                step = -lam[d, i, j]
                            lam[d, i, j] += step
                            phi[i + e0, j + e1] -= step
                            phi[i - e0, j - e1] -= step
                            phi[i, j] += 2.0 * step
                            if fabs(step) > worst:
                                worst = fabs(step)
                        i += 3
                else:
                    j = j0 + ((r - j0) % 3 + 3) % 3
                    while j < j1:
                        for i in range(i0, i1):
                            viol = phi[i + e0, j + e1] + phi[i - e0, j - e1] - 2.0 * phi[i, j] - bd
                            step = omega * viol / 6.0
                            if step < -lam[d, i, j]:
                                step = -lam[d, i, j]
                            lam[d, i, j] += step
                            phi[i + e0, j + e1] -= step
                            phi[i - e0, j - e1] -= step
                            phi[i, j] += 2.0 * step
                            if fabs(step) > worst:
                                worst = fabs(step)
                        j += 3
    return worst
