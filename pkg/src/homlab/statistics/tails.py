"""Survival curves of random radii and stretched-exponential tail fits."""

from dataclasses import dataclass, field as dc_field
import math
import warnings

import numpy as np
from scipy import stats as sps

from ..fields import empirical_K, sample_field
from ..radii import DEFAULT_C0, DEFAULT_M0, hole_filling_exponent, radius_report
from ..solver import DEFAULT_TOL, compute_correctors
from .montecarlo import run_realizations, seeds

BOOTSTRAP_SUBSEED = 0xB007


def wilson_interval(k, n, level=0.95):
    if n == 0:
        return 0.0, 1.0
    z = sps.norm.ppf(0.5 + level / 2)
    p = k / n
    den = 1 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, mid - half), min(1.0, mid + half)


def survival(samples, radii):
    """Fraction of samples strictly above each radius."""
    s = np.sort(np.asarray(samples, dtype=float))
    return 1.0 - np.searchsorted(s, np.asarray(radii, dtype=float), side="right") / s.size


def _fit_points(r, S, N):
    lo = 3.0 / N if N else 0.0
    keep = (S >= lo) & (S <= 0.5) & (S > 0) & (S < 1)
    return r[keep], S[keep]


def _regress(r, S):
    x, y = np.log(r), np.log(-np.log(S))
    slope, icpt = np.polyfit(x, y, 1)
    return float(slope), float(math.exp(icpt))


def fit_stretched_exponential(r, S, N=None, samples=None, n_boot=1000, level=0.95, seed=BOOTSTRAP_SUBSEED):
    """Fit ``log S(r) = -c r^gamma`` by regressing ``log(-log S)`` on ``log r``.

    Only points with ``S`` in ``[3/N, 0.5]`` (``(0, 0.5]`` if ``N`` is None) are
    used.  The CI comes from resampling ``samples`` when given, otherwise from
    resampling regression residuals.  Returns ``(gamma, c, (lo, hi), n_points)``.
    """
    r = np.asarray(r, dtype=float)
    S = np.asarray(S, dtype=float)
    if np.any(np.diff(S) > 1e-12):
        raise ValueError("survival curve is not monotone")
    if np.any((S < 0) | (S > 1)):
        raise ValueError("survival values must lie in [0, 1]")
    rf, Sf = _fit_points(r, S, N)
    if rf.size < 4:
        raise ValueError(f"only {rf.size} resolvable tail points (need 4)")
    gamma, c = _regress(rf, Sf)
    gen = np.random.default_rng(seed)
    boots = []
    if samples is not None:
        samples = np.asarray(samples, dtype=float)
        n = samples.size
        for _ in range(n_boot):
            Sb = survival(samples[gen.integers(0, n, n)], r)
            rb, Sb = _fit_points(r, Sb, N)
            if rb.size >= 3 and np.ptp(np.log(rb)) > 0:
                boots.append(_regress(rb, Sb)[0])
    else:
        x, y = np.log(rf), np.log(-np.log(Sf))
        yhat = np.polyval(np.polyfit(x, y, 1), x)
        res = y - yhat
        if np.allclose(res, 0, atol=1e-13):
            boots = [gamma] * n_boot
        else:
            for _ in range(n_boot):
                yb = yhat + res[gen.integers(0, res.size, res.size)]
                boots.append(float(np.polyfit(x, yb, 1)[0]))
    if len(boots) < n_boot // 2:
        ci = (float("nan"), float("nan"))
    else:
        a = (1 - level) / 2
        ci = (float(np.quantile(boots, a)), float(np.quantile(boots, 1 - a)))
    return gamma, c, ci, int(rf.size)


@dataclass
class TailEstimate:
    name: str
    radii: np.ndarray
    S: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    N: int
    samples: np.ndarray
    gamma: float = float("nan")
    c: float = float("nan")
    gamma_ci: tuple = (float("nan"), float("nan"))
    n_fit: int = 0
    target: float = float("nan")
    status: str = "ok"
    censored_fraction: float = 0.0
    warnings: list = dc_field(default_factory=list)

    @property
    def monotone(self):
        return bool(np.all(np.diff(self.S) <= 1e-12) and np.all((self.S >= 0) & (self.S <= 1)))

    def csv_rows(self):
        yield ("r", "S", "ci_lo", "ci_hi")
        for row in zip(self.radii, self.S, self.ci_lo, self.ci_hi):
            yield (int(row[0]), float(row[1]), float(row[2]), float(row[3]))

    def summary(self):
        return {
            "name": self.name,
            "N": self.N,
            "gamma": self.gamma,
            "c": self.c,
            "gamma_ci": list(self.gamma_ci),
            "n_fit": self.n_fit,
            "target_order": self.target,
            "status": self.status,
            "censored_fraction": self.censored_fraction,
            "monotone": self.monotone,
            "warnings": list(self.warnings),
        }


def tail_estimate(name, samples, cap, censored=None, target=float("nan")):
    """Survival curve on ``1..cap-1`` with Wilson bands and a stretched-exponential fit.

    Censored samples (radius hit the cap) count as exceeding every radius below
    the cap, which is the only range the curve covers.
    """
    samples = np.asarray(samples, dtype=float)
    N = samples.size
    radii = np.arange(1, int(cap))
    S = survival(samples, radii)
    k = np.rint(S * N).astype(int)
    ci = np.array([wilson_interval(kk, N) for kk in k])
    cens = 0.0 if censored is None else float(np.mean(censored))
    est = TailEstimate(name, radii, S, ci[:, 0], ci[:, 1], N, samples, target=target, censored_fraction=cens)
    if cens >= 0.2:
        est.warnings.append(f"censoring fraction {cens:.2f} >= 0.2")
    if np.all(samples <= 1):
        est.status = "degenerate"
        return est
    try:
        est.gamma, est.c, est.gamma_ci, est.n_fit = fit_stretched_exponential(radii, S, N, samples)
    except ValueError as exc:
        est.status = f"unfitted: {exc}"
    return est


def predicted_orders(d, beta, alpha, eps):
    """Predicted stretch orders for ``r_e`` and ``r_*``."""
    return alpha / (alpha + 1) * d / 2 * (1 - beta), eps * d / 2 * (1 - beta)


def monte_carlo_radii(model, grid, N, C0=DEFAULT_C0, M0=DEFAULT_M0, K="empirical", master_seed=0,
                      beta=0.0, tol=DEFAULT_TOL, threads=None, measure_eps=True):
    """Radii survival curves for ``N`` independent realizations.

    Returns ``(tail_r_e, tail_r_star, reports, info)``.
    """
    if N < 50:
        warnings.warn("fewer than 50 realizations; tail fits are unreliable")
    seed_list = seeds(master_seed, N)
    p, q = model.p, model.q
    if K == "empirical":
        # streaming pass over the same realizations
        K = empirical_K((sample_field(model, grid, s) for s in seed_list), p, q)

    def one(seed):
        fld = sample_field(model, grid, seed)
        sol = compute_correctors(fld, tol)
        rep = radius_report(fld, sol, p, q, K, C0, M0)
        eps = float("nan")
        if measure_eps:
            w = sol.grad_phi[0].copy()
            w[0] += 1.0
            lo = max(2, rep.r_e)
            hi = grid.L // 4
            if hi >= 2 * lo:
                radii = np.unique(np.geomspace(lo, hi, 6).astype(int))
                if radii.size >= 3:
                    eps = hole_filling_exponent(fld, w, radii)["eps"]
        return rep, eps, sol.converged

    out = run_realizations(one, seed_list, threads)
    reports = [o[0] for o in out]
    eps = np.array([o[1] for o in out])
    eps_hat = float(np.nanmean(eps)) if np.any(np.isfinite(eps)) else float("nan")
    t_e, t_s = predicted_orders(grid.d, beta, model.alpha, eps_hat)
    cap = grid.L // 2
    re = tail_estimate("r_e", [r.r_e for r in reports], cap, [r.r_e_truncated for r in reports], t_e)
    rs = tail_estimate("r_star", [r.r_star for r in reports], cap, [r.r_star_truncated for r in reports], t_s)
    info = {"K": float(K), "eps": eps_hat, "non_converged": int(sum(not o[2] for o in out))}
    return re, rs, reports, info
