"""Ellipticity radius, minimal radius, excess and hole-filling diagnostics.

All radii are in cell units and are scanned on the integer grid ``1..L/2``.
"""

from dataclasses import dataclass, field as dc_field, asdict
import json
import math

import numpy as np
from scipy import stats as sps

from .fields import mu_lambda
from .geometry import RadialIndex

DEFAULT_M0 = 8.0
DEFAULT_C0 = 16.0


def scan_radii(L):
    return np.arange(1, L // 2 + 1)


def moment_averages(fld, p, q, radii=None):
    """``(mean_B mu^p)^(1/p)`` and ``(mean_B lambda^-q)^(1/q)`` for every radius."""
    radii = scan_radii(fld.grid.L) if radii is None else np.asarray(radii)
    mu, lam = mu_lambda(fld)
    ri = RadialIndex(fld.grid.shape)
    m = ri.prefix_mean(np.stack([mu**p, lam ** (-q)], axis=-1), radii)
    return m[:, 0] ** (1 / p), m[:, 1] ** (1 / q)


def _last_violation(radii, ok):
    bad = np.flatnonzero(~np.asarray(ok))
    return None if bad.size == 0 else int(radii[bad[-1]])


def ellipticity_radius(fld, p, q, K, radii=None):
    """Smallest scanned ``r >= 1`` with the averaged moments ``<= 4K`` at every scanned ``rho > r``.

    Returns ``(r_e, table, truncated)``.
    """
    if not K > 0:
        raise ValueError("K must be positive")
    radii = scan_radii(fld.grid.L) if radii is None else np.asarray(radii)
    mp, mq = moment_averages(fld, p, q, radii)
    ok = mp + mq <= 4 * K
    last = _last_violation(radii, ok)
    truncated = last is not None and last >= radii[-1]
    r_e = 1 if last is None else max(1, last)
    return r_e, {"rho": radii, "mu_avg": mp, "lambda_avg": mq}, truncated


def oscillation(values, ri, radii, exponent):
    """``(mean_B |v - mean_B v|^s)^(1/s)`` per radius; ``v`` has trailing component axes."""
    v = np.asarray(values, dtype=np.float64)
    flat = v.reshape((-1,) + v.shape[len(ri.shape):])
    flat = flat.reshape(flat.shape[0], -1)[ri.order]
    out = np.empty(len(radii))
    for n, rho in enumerate(radii):
        sub = flat[: int(ri.count(rho))]
        dev = np.sqrt(np.sum((sub - sub.mean(axis=0)) ** 2, axis=1))
        out[n] = np.mean(dev**exponent) ** (1.0 / exponent)
    return out


def _cell_major(a, lead):
    """Move the ``lead`` leading component axes behind the lattice axes."""
    return np.moveaxis(a, tuple(range(lead)), tuple(range(a.ndim - lead, a.ndim)))


def sublinearity_table(sol, p, q, radii=None):
    """Normalized oscillations of ``phi`` and ``sigma`` on every scanned ball."""
    d = sol.d
    shape = sol.phi.shape[1:]
    radii = scan_radii(shape[0]) if radii is None else np.asarray(radii)
    ri = RadialIndex(shape)
    sp = 2 * p / (p - 1)
    sq = 2 * q / (q - 1)
    rr = radii * sol.h
    xphi = oscillation(_cell_major(sol.phi, 1), ri, radii, sp) / rr
    sig = sol.sigma.reshape((d**3,) + shape)
    xsig = oscillation(_cell_major(sig, 1), ri, radii, sq) / rr
    return {"rho": radii, "X_phi": xphi, "X_sigma": xsig, "X": np.maximum(xphi, xsig)}


def sublinearity_functional(sol, rho, p, q):
    t = sublinearity_table(sol, p, q, [rho])
    return float(t["X"][0]), float(t["X_phi"][0]), float(t["X_sigma"][0])


def minimal_radius(X_table, r_e, C0=DEFAULT_C0, M0=DEFAULT_M0, L=None):
    """Smallest scanned ``r >= M0 r_e`` with ``X(rho) <= 1/C0`` for all scanned ``rho > r``.

    Returns ``(r_star, truncated)``.
    """
    radii = np.asarray(X_table["rho"])
    cap = int(radii[-1]) if L is None else L // 2
    floor = int(math.ceil(M0 * r_e - 1e-12))
    ok = np.asarray(X_table["X"]) <= 1.0 / C0
    last = _last_violation(radii, ok)
    if floor >= cap or (last is not None and last >= cap):
        return cap, True
    return max(floor, 1 if last is None else last), False


def m0_from_constant(C, theta):
    """``M0 = (2C)^(1/(1-theta))``."""
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0, 1)")
    return (2 * C) ** (1 / (1 - theta))


@dataclass
class RadiusReport:
    seed: int
    model_id: str
    K: float
    C0: float
    M0: float
    r_e: int
    r_star: int
    r_e_truncated: bool
    r_star_truncated: bool
    rho: list = dc_field(default_factory=list)
    mu_avg: list = dc_field(default_factory=list)
    lambda_avg: list = dc_field(default_factory=list)
    X: list = dc_field(default_factory=list)
    X_phi: list = dc_field(default_factory=list)
    X_sigma: list = dc_field(default_factory=list)

    @property
    def truncated(self):
        return self.r_e_truncated or self.r_star_truncated

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    def recheck(self):
        """Re-evaluate both defining predicates on the stored table."""
        rho = np.asarray(self.rho)
        m = np.asarray(self.mu_avg) + np.asarray(self.lambda_avg)
        ok_e = self.r_e_truncated or bool(np.all(m[rho > self.r_e] <= 4 * self.K))
        ok_e_min = self.r_e == 1 or self.r_e_truncated or bool(m[rho == self.r_e][0] > 4 * self.K)
        X = np.asarray(self.X)
        ok_s = self.r_star_truncated or bool(np.all(X[rho > self.r_star] <= 1 / self.C0))
        floor = math.ceil(self.M0 * self.r_e - 1e-12)
        ok_s_min = self.r_star_truncated or self.r_star == floor or bool(X[rho == self.r_star][0] > 1 / self.C0)
        return ok_e and ok_e_min and ok_s and ok_s_min and self.r_star >= min(floor, rho[-1])


def radius_report(fld, sol, p, q, K, C0=DEFAULT_C0, M0=DEFAULT_M0):
    r_e, tab, tr_e = ellipticity_radius(fld, p, q, K)
    xt = sublinearity_table(sol, p, q)
    r_star, tr_s = minimal_radius(xt, r_e, C0, M0, fld.grid.L)
    return RadiusReport(
        seed=int(fld.seed),
        model_id=fld.model_id,
        K=float(K),
        C0=float(C0),
        M0=float(M0),
        r_e=int(r_e),
        r_star=int(r_star),
        r_e_truncated=bool(tr_e),
        r_star_truncated=bool(tr_s or tr_e),
        rho=[int(r) for r in tab["rho"]],
        mu_avg=tab["mu_avg"].tolist(),
        lambda_avg=tab["lambda_avg"].tolist(),
        X=xt["X"].tolist(),
        X_phi=xt["X_phi"].tolist(),
        X_sigma=xt["X_sigma"].tolist(),
    )


# ---------------------------------------------------------------------------
# excess and hole filling


def cell_gradient(w):
    """Average face vectors onto cell centres: ``g_k(x) = (w_k(x) + w_k(x - e_k)) / 2``."""
    return np.stack([0.5 * (w[k] + np.roll(w[k], 1, axis=k)) for k in range(w.shape[0])])


def _a_apply(fld, v):
    """``a(x) v(x)`` for a cell vector field ``v`` of shape ``(d, *grid)``."""
    d = fld.grid.d
    return np.stack([sum(fld.component(i, j) * v[j] for j in range(d)) for i in range(d)])


def energy_density(fld, w):
    """``|g|_a^2`` per cell with ``g`` the cell-centred version of face field ``w``."""
    g = cell_gradient(w)
    return np.sum(g * _a_apply(fld, g), axis=0)


class DegenerateExcess(ValueError):
    """The excess at the outer radius vanishes to round-off."""


def excess(u_grad, sol, fld, rho):
    """``min_xi mean_B |grad u - (xi + grad phi_xi)|_a^2`` and the minimizer.

    Returns ``(value, xi, info)``; ``info['ill_conditioned']`` flags a nearly
    singular Gram matrix, in which case the least-norm minimizer is used.
    """
    d = sol.d
    ri = RadialIndex(fld.grid.shape)
    cells = ri.ball(rho)
    gu = cell_gradient(u_grad).reshape(d, -1)[:, cells]
    W = []
    for i in range(d):
        w = sol.grad_phi[i].copy()
        w[i] += 1.0
        W.append(cell_gradient(w).reshape(d, -1)[:, cells])
    mats = fld.matrices().reshape(-1, d, d)[cells]

    def ip(x, y):
        return float(np.mean(np.einsum("kn,nkl,ln->n", x, mats, y)))

    G = np.array([[ip(W[i], W[j]) for j in range(d)] for i in range(d)])
    b = np.array([ip(W[i], gu) for i in range(d)])
    cond = np.linalg.cond(G) if np.all(np.isfinite(G)) else np.inf
    ill = not cond < 1e12
    xi = np.linalg.lstsq(G, b, rcond=None)[0]
    r = gu - sum(xi[i] * W[i] for i in range(d))
    return max(ip(r, r), 0.0), xi, {"gram": G, "cond": float(cond), "ill_conditioned": bool(ill)}


def excess_decay_ratio(u_grad, sol, fld, r, R, alpha=0.5):
    if not r < R:
        raise ValueError("need r < R")
    e_r = excess(u_grad, sol, fld, r)[0]
    e_R = excess(u_grad, sol, fld, R)[0]
    if e_R < 1e-14:
        raise DegenerateExcess(f"Exc({R}) = {e_R:.3g}: exact-degeneracy case, ratio undefined")
    return e_r * (R / r) ** (2 * alpha) / e_R


def ball_energies(fld, u_grad, radii):
    """Non-normalized ``sum_{B_r} |grad u|_a^2 h^d`` for every radius."""
    dens = energy_density(fld, u_grad)
    ri = RadialIndex(fld.grid.shape)
    n = ri.count(radii)
    return ri.prefix_mean(dens, radii) * n * fld.grid.h**fld.grid.d


def hole_filling_exponent(fld, u_grads, radii, level=0.95):
    """Log-log slope of the ball energy in ``r``; the slope estimates ``eps * d``.

    ``u_grads`` is one face gradient field or a list of them (pooled regression).
    """
    radii = np.asarray(radii, dtype=float)
    if radii.size < 3:
        raise ValueError("need at least 3 radii")
    if isinstance(u_grads, np.ndarray):
        u_grads = [u_grads]
    xs, ys = [], []
    for w in u_grads:
        E = ball_energies(fld, w, radii)
        keep = E > 0
        xs.append(np.log(radii[keep]))
        ys.append(np.log(E[keep]))
    x, y = np.concatenate(xs), np.concatenate(ys)
    if x.size < 3:
        raise ValueError("energy vanishes on the requested radii")
    res = sps.linregress(x, y)
    half = sps.t.ppf(0.5 + level / 2, max(x.size - 2, 1)) * res.stderr
    d = fld.grid.d
    return {
        "slope": float(res.slope),
        "ci": (float(res.slope - half), float(res.slope + half)),
        "eps": float(res.slope / d),
        "eps_ci": (float((res.slope - half) / d), float((res.slope + half) / d)),
    }


def mean_value_ratio(fld, u_grad, r, R):
    """``mean_{B_r} |grad u|_a^2 / mean_{B_R} |grad u|_a^2`` (measured mean-value constant)."""
    dens = energy_density(fld, u_grad)
    ri = RadialIndex(fld.grid.shape)
    m = ri.prefix_mean(dens, [r, R])
    return float(m[0] / m[1])


def harmonic_test_function(op, sol, xi, seed=0, tol=1e-10, far_fraction=0.375):
    """Face gradient of ``u = xi.x + phi_xi + v`` with ``v`` driven by far-away sources.

    ``v`` solves ``L v = f`` where ``f`` is mean-zero and supported at distance
    at least ``far_fraction * L`` from the origin, so ``u`` is a-harmonic on the
    ball of that radius.  Returns ``(face gradient, source support mask)``.
    """
    from . import rng
    from .geometry import origin_distance
    from .solver import solve

    shape = op.shape
    far = origin_distance(shape) >= far_fraction * shape[0]
    f = np.zeros(shape)
    idx = np.flatnonzero(far.ravel())
    f.ravel()[idx] = rng.normal(seed, idx, 3)
    f[far] -= f[far].mean()
    v, st = solve(op, f, tol)
    xi = np.asarray(xi, dtype=float)
    w = np.tensordot(xi, sol.grad_phi, axes=1) + op.grad(v)
    for i in range(op.d):
        w[i] += xi[i]
    return w, far
