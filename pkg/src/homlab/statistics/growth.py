"""Corrector growth curves, averaged-gradient decay and the averaged-oscillation bound."""

from dataclasses import dataclass, field as dc_field
import math

import numpy as np
from scipy import stats as sps

from ..geometry import RadialIndex, ball_average, ball_mask, origin_distance
from ..radii import _cell_major, moment_averages, oscillation, scan_radii, sublinearity_table


def mu_regime(beta, eps_d, atol=1e-12):
    b = 1.0 - 2.0 / eps_d
    if abs(beta - b) <= atol:
        return "logarithmic"
    return "bounded" if beta < b else "power"


def mu_weight(r, beta, eps_d):
    """Growth weight ``mu(r)``: 1, ``log(1+r)`` or a power of ``r`` depending on ``beta``."""
    r = np.asarray(r, dtype=float)
    regime = mu_regime(beta, eps_d)
    if regime == "bounded":
        return np.ones_like(r)
    if regime == "logarithmic":
        return np.log1p(r)
    return r ** (eps_d / 2 * (2 / eps_d - 1 + beta))


def unit_density(shape, r, kind="uniform", axis=0):
    """Vector density ``m`` on ``B_r`` with ``mean_B |m|^2 = 1``, pointing along ``axis``."""
    mask = ball_mask(shape, r)
    if kind == "uniform":
        prof = mask.astype(float)
    elif kind == "bump":
        prof = np.where(mask, 1.0 - (origin_distance(shape) / (r + 1)) ** 2, 0.0)
    else:
        raise ValueError(f"unknown density {kind!r}")
    prof = prof / math.sqrt(np.mean(prof[mask] ** 2))
    m = np.zeros((len(shape),) + tuple(shape))
    m[axis] = prof
    return m


def averaged_gradient(sol, r, density):
    """``|mean_{B_r} grad(phi, sigma) . m|`` for the corrector and flux-corrector parts.

    The ``phi`` part is the Euclidean norm over ``i``; the ``sigma`` part is the
    Frobenius norm over ``(i, k, j)``.
    """
    d = sol.d
    shape = sol.phi.shape[1:]
    mask = ball_mask(shape, r)
    n = mask.sum()
    gphi = np.array([np.sum(sol.grad_phi[i] * density) / n for i in range(d)])
    gs = sol.grad_sigma
    gsig = np.array([[[np.sum(gs[i, k, j] * density) / n for j in range(d)] for k in range(d)] for i in range(d)])
    return float(np.linalg.norm(gphi)), float(np.linalg.norm(gsig))


def _slope(r, v):
    keep = (np.asarray(v) > 0) & np.isfinite(v)
    if keep.sum() < 3:
        return float("nan"), (float("nan"), float("nan"))
    res = sps.linregress(np.log(np.asarray(r)[keep]), np.log(np.asarray(v)[keep]))
    half = sps.t.ppf(0.975, keep.sum() - 2) * res.stderr
    return float(res.slope), (float(res.slope - half), float(res.slope + half))


@dataclass
class GrowthCurve:
    radii: np.ndarray
    osc_phi: np.ndarray
    osc_sigma: np.ndarray
    avg_grad: dict
    slopes: dict = dc_field(default_factory=dict)
    regime: str = ""


def corrector_growth_curve(sol, radii, p, q, densities=("uniform",), beta=0.0, eps_d=None):
    """Oscillation growth of ``(phi, sigma)`` and averaged-gradient decay over ``radii``."""
    radii = np.asarray(radii)
    xt = sublinearity_table(sol, p, q, radii)
    osc_phi = xt["X_phi"] * radii * sol.h
    osc_sig = xt["X_sigma"] * radii * sol.h
    shape = sol.phi.shape[1:]
    avg = {}
    for kind in densities:
        vals = np.array([averaged_gradient(sol, r, unit_density(shape, r, kind)) for r in radii])
        avg[kind] = {"phi": vals[:, 0], "sigma": vals[:, 1]}
    curve = GrowthCurve(radii, osc_phi, osc_sig, avg)
    curve.slopes["osc_phi"] = _slope(radii, osc_phi)
    curve.slopes["osc_sigma"] = _slope(radii, osc_sig)
    for kind, v in avg.items():
        curve.slopes[f"avg_{kind}_phi"] = _slope(radii, v["phi"])
        curve.slopes[f"avg_{kind}_sigma"] = _slope(radii, v["sigma"])
    if eps_d is not None:
        curve.regime = mu_regime(beta, eps_d)
    return curve


def _local_average_norm(arr, radius, exponent, ri, r):
    """``(mean_{B_r} |mean_{B_radius(x)} arr|^s)^(1/s)``; ``arr`` has leading component axes."""
    nlead = arr.ndim - len(ri.shape)
    axes = tuple(range(nlead, arr.ndim))
    loc = ball_average(arr, radius, axes=axes)
    mag = np.sqrt(np.sum(loc.reshape((-1,) + ri.shape) ** 2, axis=0))
    return float(ri.prefix_mean(mag**exponent, [r])[0] ** (1 / exponent))


def coravg_diagnostic(sol, fld, r, L_avg, p, q):
    """Every term of the averaged-oscillation inequality and the ratio left/right."""
    shape = sol.phi.shape[1:]
    Lg = shape[0]
    if not 0 < L_avg < r <= Lg // 16:
        raise ValueError(f"need 0 < L_avg < r <= L/16 = {Lg // 16}")
    d = sol.d
    theta = d / 2 * (1 / p + 1 / q)
    ri = RadialIndex(shape)
    sp, sq = 2 * p / (p - 1), 2 * q / (q - 1)
    xt = sublinearity_table(sol, p, q, [r])
    lhs = float(xt["X_phi"][0] + xt["X_sigma"][0])
    t_phi = _local_average_norm(sol.grad_phi, L_avg, 2 * q / (q + 1), ri, r)
    t_sig = _local_average_norm(sol.grad_sigma, L_avg, 2 * p / (p + 1), ri, r)
    Rs = scan_radii(Lg)
    Rs = Rs[Rs >= r]
    mp, mq = moment_averages(fld, p, q, Rs)
    K_bar = float(np.max(mp + mq))
    sig = sol.sigma.reshape((d**3,) + shape)
    o8_phi = oscillation(_cell_major(sol.phi, 1), ri, [8 * r], sp)[0] / (r * sol.h)
    o8_sig = oscillation(_cell_major(sig, 1), ri, [8 * r], sq)[0] / (r * sol.h)
    t_K = math.sqrt(K_bar) * (L_avg / r) ** (1 - theta) * (1 + o8_phi + o8_sig)
    rhs = t_phi + t_sig + t_K
    return {
        "lhs": lhs,
        "avg_grad_phi": t_phi,
        "avg_grad_sigma": t_sig,
        "K_bar": K_bar,
        "K_term": t_K,
        "theta": theta,
        "rhs": rhs,
        "ratio": lhs / rhs if rhs > 0 else 0.0,
    }
