"""Pure numpy versions of the compiled stencil kernels (same signatures)."""

import math

import numpy as np


def apply_diag(A, u, h):
    out = np.zeros_like(u)
    for k in range(3):
        up = np.roll(u, -1, axis=k)
        um = np.roll(u, 1, axis=k)
        out += A[k] * (u - up) + np.roll(A[k], 1, axis=k) * (u - um)
    return out / (h * h)


def _center(a):
    a -= a.mean()
    return a


def pcg(apply, b, dinv, x0, tol, maxiter):
    """Preconditioned CG on mean-zero lattice functions for a symmetric ``apply``.

    Returns ``(x, iterations, relative recursive residual)`` for the iterate with
    the smallest residual seen.
    """
    b = _center(np.array(b, dtype=np.float64))
    x = _center(np.array(x0, dtype=np.float64))
    bnorm = math.sqrt(float(np.vdot(b, b)))
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    r = _center(b - apply(x))
    rnorm = math.sqrt(float(np.vdot(r, r)))
    best, best_norm = x.copy(), rnorm
    z = _center(dinv * r)
    p = z.copy()
    rz = float(np.vdot(r, z))
    it = 0
    while rnorm > tol * bnorm and it < maxiter:
        q = apply(p)
        pq = float(np.vdot(p, q))
        if pq <= 0.0:
            break
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        _center(r)
        it += 1
        rnorm = math.sqrt(float(np.vdot(r, r)))
        if rnorm < best_norm:
            best_norm = rnorm
            best = x.copy()
        z = _center(dinv * r)
        rz_new = float(np.vdot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    return _center(best), it, best_norm / bnorm


def pcg_diag(A, b, x0, tol, maxiter, h):
    dsum = sum(A[k] + np.roll(A[k], 1, axis=k) for k in range(3))
    dinv = 1.0 / (np.maximum(dsum, 1e-300) / (h * h))
    return pcg(lambda u: apply_diag(A, u, h), b, dinv, x0, tol, maxiter)
