# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False, language_level=3
"""Compiled two-point-flux stencil and preconditioned CG on the periodic lattice.

Arrays are always 3-D; two-dimensional problems pass a trailing axis of length
one with zero coefficients on its faces.
"""

import numpy as np
from libc.math cimport sqrt, fmax


cdef void _apply(const double[:, :, :, ::1] A, const double[:, :, ::1] u,
                 double[:, :, ::1] out, double ih2) noexcept nogil:
    cdef Py_ssize_t n0 = u.shape[0], n1 = u.shape[1], n2 = u.shape[2]
    cdef Py_ssize_t i, j, k, ip, im, jp, jm, kp, km
    cdef double c, s
    for i in range(n0):
        ip = i + 1 if i + 1 < n0 else 0
        im = i - 1 if i > 0 else n0 - 1
        for j in range(n1):
            jp = j + 1 if j + 1 < n1 else 0
            jm = j - 1 if j > 0 else n1 - 1
            for k in range(n2):
                kp = k + 1 if k + 1 < n2 else 0
                km = k - 1 if k > 0 else n2 - 1
                c = u[i, j, k]
                s = A[0, i, j, k] * (c - u[ip, j, k]) + A[0, im, j, k] * (c - u[im, j, k])
                s += A[1, i, j, k] * (c - u[i, jp, k]) + A[1, i, jm, k] * (c - u[i, jm, k])
                s += A[2, i, j, k] * (c - u[i, j, kp]) + A[2, i, j, km] * (c - u[i, j, km])
                out[i, j, k] = s * ih2


def apply_diag(double[:, :, :, ::1] A, double[:, :, ::1] u, double h):
    out = np.empty((u.shape[0], u.shape[1], u.shape[2]))
    cdef double[:, :, ::1] o = out
    with nogil:
        _apply(A, u, o, 1.0 / (h * h))
    return out


cdef double _dot(const double[::1] a, const double[::1] b) noexcept nogil:
    cdef Py_ssize_t n = a.shape[0], i
    cdef double s = 0.0
    for i in range(n):
        s += a[i] * b[i]
    return s


cdef void _center(double[::1] a) noexcept nogil:
    cdef Py_ssize_t n = a.shape[0], i
    cdef double m = 0.0
    for i in range(n):
        m += a[i]
    m /= n
    for i in range(n):
        a[i] -= m


def pcg_diag(double[:, :, :, ::1] A, double[:, :, ::1] b, double[:, :, ::1] x0,
             double tol, long maxiter, double h):
    """Jacobi-preconditioned CG for ``L x = b`` on mean-zero functions.

    Returns ``(x, iterations, relative residual)`` where ``x`` is the iterate
    with the smallest recursive residual seen.
    """
    cdef Py_ssize_t n0 = b.shape[0], n1 = b.shape[1], n2 = b.shape[2]
    cdef Py_ssize_t n = n0 * n1 * n2, i, j, k, m
    cdef double ih2 = 1.0 / (h * h)

    xa = np.array(x0, dtype=np.float64, copy=True)
    ra = np.empty((n0, n1, n2))
    za = np.empty((n0, n1, n2))
    pa = np.empty((n0, n1, n2))
    qa = np.empty((n0, n1, n2))
    dinv_a = np.empty((n0, n1, n2))
    best_a = np.empty((n0, n1, n2))
    ba = np.array(b, dtype=np.float64, copy=True)

    cdef double[:, :, ::1] x3 = xa, r3 = ra, p3 = pa, q3 = qa, dv = dinv_a
    cdef double[::1] x = xa.reshape(-1), r = ra.reshape(-1), z = za.reshape(-1)
    cdef double[::1] p = pa.reshape(-1), q = qa.reshape(-1), di = dinv_a.reshape(-1)
    cdef double[::1] best = best_a.reshape(-1), bb = ba.reshape(-1)
    cdef long it = 0
    cdef double bnorm, rnorm, best_norm, rz, rz_new, alpha, beta, pq, dsum

    with nogil:
        for i in range(n0):
            for j in range(n1):
                for k in range(n2):
                    dsum = (A[0, i, j, k] + A[0, (i - 1 + n0) % n0, j, k]
                            + A[1, i, j, k] + A[1, i, (j - 1 + n1) % n1, k]
                            + A[2, i, j, k] + A[2, i, j, (k - 1 + n2) % n2])
                    dv[i, j, k] = 1.0 / (fmax(dsum, 1e-300) * ih2)
        _center(bb)
        bnorm = sqrt(_dot(bb, bb))
        _center(x)
        _apply(A, x3, r3, ih2)
        for m in range(n):
            r[m] = bb[m] - r[m]
        _center(r)
        rnorm = sqrt(_dot(r, r))
        best_norm = rnorm
        for m in range(n):
            best[m] = x[m]
        if bnorm == 0.0:
            for m in range(n):
                x[m] = 0.0
                best[m] = 0.0
            best_norm = 0.0
        else:
            for m in range(n):
                z[m] = di[m] * r[m]
            _center(z)
            for m in range(n):
                p[m] = z[m]
            rz = _dot(r, z)
            while rnorm > tol * bnorm and it < maxiter:
                _apply(A, p3, q3, ih2)
                pq = _dot(p, q)
                if pq <= 0.0:
                    break
                alpha = rz / pq
                for m in range(n):
                    x[m] += alpha * p[m]
                    r[m] -= alpha * q[m]
                _center(r)
                it += 1
                rnorm = sqrt(_dot(r, r))
                if rnorm < best_norm:
                    best_norm = rnorm
                    for m in range(n):
                        best[m] = x[m]
                for m in range(n):
                    z[m] = di[m] * r[m]
                _center(z)
                rz_new = _dot(r, z)
                beta = rz_new / rz
                rz = rz_new
                for m in range(n):
                    p[m] = z[m] + beta * p[m]
        _center(best)
    rel = best_norm / bnorm if bnorm > 0 else 0.0
    return best_a, int(it), float(rel)
