from itertools import product

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from homlab.fields import CoefficientField, GridSpec
from homlab.solver import bwd, fwd, poisson_fft, solve_flux_corrector

settings.register_profile("homlab", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("homlab")


def spd_field(L, seed, d=2, spread=1.0, h=1.0):
    """Random full-tensor SPD field; small lattices may skip the power-of-two rule."""
    grid = GridSpec(d, L, h, require_pow2=False)
    gen = np.random.default_rng(seed)
    m = gen.normal(scale=spread, size=grid.shape + (d, d))
    mats = m @ np.swapaxes(m, -1, -2) + 0.5 * np.eye(d)
    return CoefficientField.from_matrices(grid, mats)


def scalar_field(L, seed, d=2, sigma=1.0, h=1.0):
    grid = GridSpec(d, L, h, require_pow2=False)
    gen = np.random.default_rng(seed)
    return CoefficientField.from_scalar(grid, np.exp(sigma * gen.normal(size=grid.shape)))


def first_order(L, cell, b, g):
    """Derivative of the corrector functionals at a = I for a one-cell perturbation ``b``."""
    d = 2
    B = np.zeros((d, d, L, L))
    for k in range(d):
        for j in range(d):
            B[k, j].flat[cell] = b[k, j]

    def vmean(c):
        return sum(np.roll(c, [-s for s in sh], axis=(0, 1)) for sh in product((0, 1), repeat=2)) / 4

    def PT(V, j):
        sh = [s for s in product((0, 1), repeat=2) if s[j] == 0]
        return sum(np.roll(V, list(s), axis=(0, 1)) for s in sh) / 2

    dphi, dsig = np.zeros(d), []
    for i in range(d):
        dF = np.zeros((d, L, L))
        dF[i] = 0.5 * (B[i, i] + np.roll(B[i, i], -1, axis=i))
        for k in range(d):
            if k != i:
                dF[k] = PT(vmean(B[k, i]), k)
        psi = poisson_fft(sum(bwd(dF[k], k) for k in range(d)))
        grad = np.stack([fwd(psi, k) for k in range(d)])
        sig = solve_flux_corrector(dF + grad)
        dphi[i] = np.sum(g * grad)
        gs = np.stack([np.roll(sig, -1, axis=2 + m) - sig for m in range(d)])
        dsig.append(np.array([[np.sum(g * gs[:, k, j]) for j in range(d)] for k in range(d)]).ravel())
    return dphi, np.concatenate(dsig)


@pytest.fixture
def grid8():
    return GridSpec(2, 8)
