"""Finite-difference sensitivity of averaged corrector gradients to local coefficient changes.

For each partition block ``D`` and each direction ``b`` from a fixed dictionary,
the coefficient is perturbed to ``a + t a^(1/2) b a^(1/2)`` on ``D`` and the
extended corrector is recomputed.  The dictionary only lower-bounds the
supremum over all bounded ``b``.
"""

import math

import numpy as np

from ..fields import CoefficientField, triu_pairs
from ..geometry import ball_mask
from ..solver import assemble_operator, solve_corrector, compute_flux, solve_flux_corrector

RICHARDSON_BAND = (0.9, 1.1)


def direction_dictionary(d, seed=0):
    """Symmetric coordinate matrices plus random symmetric unit-spectral-norm ones, ``2 d^2`` in total."""
    dirs = []
    for i, j in triu_pairs(d):
        b = np.zeros((d, d))
        b[i, j] = b[j, i] = 1.0
        dirs.append(b)
    gen = np.random.default_rng(seed)
    while len(dirs) < 2 * d * d:
        m = gen.normal(size=(d, d))
        m = m + m.T
        dirs.append(m / np.abs(np.linalg.eigvalsh(m)).max())
    return dirs


def sqrt_spd(mats):
    w, v = np.linalg.eigh(mats)
    return np.einsum("...ij,...j,...kj->...ik", v, np.sqrt(w), v)


def perturbed_field(fld, cells, b, t):
    """Copy of ``fld`` with ``a + t a^(1/2) b a^(1/2)`` on the flat cell indices ``cells``."""
    d = fld.grid.d
    mats = fld.matrices().reshape(-1, d, d)
    sub = mats[cells]
    s = sqrt_spd(sub)
    mats = mats.copy()
    mats[cells] = sub + t * s @ b @ s
    mats = 0.5 * (mats + np.swapaxes(mats, -1, -2))
    return CoefficientField.from_matrices(fld.grid, mats.reshape(fld.grid.shape + (d, d)), fld.model_id, fld.seed)


def test_fields(fld, radii, axis=0):
    """``g_r = c_r 1_{B_r} e_axis`` with ``(mean_B |g|_{a^-1}^2)^(1/2) = r^-d``."""
    d = fld.grid.d
    inv = np.linalg.inv(fld.matrices())[..., axis, axis]
    out = []
    for r in radii:
        mask = ball_mask(fld.grid.shape, r)
        c = r ** (-d) / math.sqrt(np.mean(inv[mask]))
        g = np.zeros((d,) + fld.grid.shape)
        g[axis] = c * mask
        out.append(g)
    return out


def corrector_functionals(fld, gs, tol=1e-12, method="direct"):
    """``(int g . grad phi_i, int g . grad sigma_ikj)`` for each test field ``g``.

    Returns two arrays of shape ``(len(gs), d)`` and ``(len(gs), d^3)``.
    """
    op = assemble_operator(fld)
    d, h = fld.grid.d, fld.grid.h
    vol = h**d
    fphi = np.zeros((len(gs), d))
    fsig = np.zeros((len(gs), d**3))
    for i in range(d):
        _, gphi, _ = solve_corrector(op, i, tol, method)
        sig = solve_flux_corrector(compute_flux(op, gphi, i), h)
        gsig = np.stack([(np.roll(sig, -1, axis=2 + m) - sig) / h for m in range(d)])  # [m, k, j, ...]
        for n, g in enumerate(gs):
            fphi[n, i] = np.sum(g * gphi) * vol
            fsig[n, i * d * d:(i + 1) * d * d] = np.sum(g[:, None, None] * gsig, axis=tuple(range(3, 3 + d))).sum(axis=0).ravel() * vol
    return fphi, fsig


def sensitivity_probe(fld, partition, radii, t=1e-4, axis=0, seed=0, tol=1e-12, method="direct", richardson=True):
    """Per-block finite-difference derivative norms and their squared sums.

    Returns a dict with, per radius, ``aggregate = sum_D (max_b |dF_phi|)^2 +
    sum_D (max_b |dF_sigma|)^2`` and the Richardson diagnostics.
    """
    radii = list(radii)
    gs = test_fields(fld, radii, axis)
    base_phi, base_sig = corrector_functionals(fld, gs, tol, method)
    dirs = direction_dictionary(fld.grid.d, seed)
    nb = len(partition.blocks)
    sup_phi = np.zeros((nb, len(radii)))
    sup_sig = np.zeros((nb, len(radii)))
    best_dir = np.zeros(nb, dtype=int)
    best_norm = np.zeros(nb)

    def fd(cells, b, step):
        pf, ps = corrector_functionals(perturbed_field(fld, cells, b, step), gs, tol, method)
        return (pf - base_phi) / step, (ps - base_sig) / step

    for n, cells in enumerate(partition.blocks):
        for k, b in enumerate(dirs):
            dphi, dsig = fd(cells, b, t)
            nphi = np.linalg.norm(dphi, axis=1)
            nsig = np.linalg.norm(dsig, axis=1)
            sup_phi[n] = np.maximum(sup_phi[n], nphi)
            sup_sig[n] = np.maximum(sup_sig[n], nsig)
            tot = float(np.sum(nphi**2 + nsig**2))
            if tot > best_norm[n]:
                best_norm[n], best_dir[n] = tot, k
    ratios = np.full(nb, np.nan)
    flagged = []
    if richardson:
        scale = best_norm.max() if nb else 0.0
        for n, cells in enumerate(partition.blocks):
            if best_norm[n] <= 1e-16 * max(scale, 1e-300):
                continue
            b = dirs[best_dir[n]]
            full = np.concatenate(fd(cells, b, t), axis=1)
            half = np.concatenate(fd(cells, b, t / 2), axis=1)
            ratio = float(np.linalg.norm(half) / np.linalg.norm(full))
            if not RICHARDSON_BAND[0] <= ratio <= RICHARDSON_BAND[1]:
                quarter = np.concatenate(fd(cells, b, t / 4), axis=1)
                ratio = float(np.linalg.norm(quarter) / np.linalg.norm(half))
                flagged.append(int(n))
            ratios[n] = ratio
    agg = np.sum(sup_phi**2, axis=0) + np.sum(sup_sig**2, axis=0)
    ok = ratios[np.isfinite(ratios)]
    return {
        "radii": radii,
        "aggregate": agg,
        "aggregate_phi": np.sum(sup_phi**2, axis=0),
        "aggregate_sigma": np.sum(sup_sig**2, axis=0),
        "sup_phi": sup_phi,
        "sup_sigma": sup_sig,
        "richardson_ratios": ratios,
        "richardson_flagged": flagged,
        "richardson_ok": bool(np.all((ok >= RICHARDSON_BAND[0]) & (ok <= RICHARDSON_BAND[1]))),
        "base_phi": base_phi,
        "base_sigma": base_sig,
        "step": t,
        "n_directions": len(dirs),
    }


def predicted_envelope(radii, r_star, eps, beta, d):
    """``((r + r_*)^(1 - eps (1 - beta)) / r)^d`` (up to a constant)."""
    r = np.asarray(radii, dtype=float)
    return ((r + r_star) ** (1 - eps * (1 - beta)) / r) ** d


def fit_envelope_constant(aggregate, envelope):
    """Least-squares constant in log space: ``log C = mean(log agg - log env)``."""
    a, e = np.asarray(aggregate), np.asarray(envelope)
    keep = (a > 0) & (e > 0)
    return float(np.exp(np.mean(np.log(a[keep]) - np.log(e[keep])))) if keep.any() else float("nan")
