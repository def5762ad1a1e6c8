"""Polynomial-moment versus exponential-moment tail diagnostics."""

import math

import numpy as np
from scipy.special import logsumexp

MIN_ESS = 30.0


def effective_sample_size(log_w):
    """``(sum w)^2 / sum w^2`` from log-weights."""
    log_w = np.asarray(log_w, dtype=float)
    return float(math.exp(2 * logsumexp(log_w) - logsumexp(2 * log_w)))


def moment_equivalence_check(F, p_req=8, C_grid=None, min_ess=MIN_ESS, slope_max=1.25):
    """Compare growth of ``<F^p>^(1/p)`` in ``p`` with finiteness of ``<exp(F/C)>``.

    Linear growth of the ``p``-th moments and a finite exponential moment are two
    views of the same exponential-type tail.  Each diagnostic only uses
    estimates whose importance weights have an effective sample size of at least
    ``min_ess`` (``F^p``) or ``max(min_ess, sqrt(n))`` (``exp(F/C)``).
    """
    F = np.asarray(F, dtype=float).ravel()
    if F.size < 1000:
        raise ValueError("need at least 1000 samples")
    if np.any(F < 0) or not np.all(np.isfinite(F)):
        raise ValueError("samples must be finite and nonnegative")
    notes = []
    ps = np.arange(2, int(p_req) + 1)
    moments, ratios, ess = [], [], []
    p_max = 1
    pos = F[F > 0]
    for p in ps:
        if pos.size == 0:
            m, e = 0.0, float(F.size)
        else:
            lw = p * np.log(pos)
            m = math.exp((logsumexp(lw) - math.log(F.size)) / p)
            e = effective_sample_size(lw)
        moments.append(m)
        ratios.append(m / p)
        ess.append(e)
        if e >= min_ess and p_max == p - 1:
            p_max = int(p)
    if p_max < p_req:
        notes.append(f"tail support limits p_max to {p_max}")
    rel = ps <= p_max
    slope = float("nan")
    if rel.sum() >= 2 and moments[0] > 0:
        slope = float(np.polyfit(np.log(ps[rel]), np.log(np.asarray(moments)[rel]), 1)[0])
    if pos.size == 0:
        poly_bounded = True
    else:
        poly_bounded = p_max >= 4 and slope <= slope_max
    poly_class = "bounded" if poly_bounded else "diverging"

    scale = float(np.mean(F)) or 1.0
    C_grid = np.geomspace(0.05, 200, 400) * scale if C_grid is None else np.sort(np.asarray(C_grid, dtype=float))
    C_star, exp_ess = float("nan"), 0.0
    for C in C_grid:
        lw = F / C
        if logsumexp(lw) - math.log(F.size) < math.log(2.0):
            C_star = float(C)
            exp_ess = effective_sample_size(lw)
            break
    # heavy tails make exp(F/C) weights degenerate: their ESS stays O(1) instead of growing with n
    exp_bounded = math.isfinite(C_star) and exp_ess >= max(min_ess, math.sqrt(F.size))
    if not math.isfinite(C_star):
        notes.append("no C on the grid gives <exp(F/C)> < 2")
    exp_class = "bounded" if exp_bounded else "diverging"
    return {
        "p": ps.tolist(),
        "moments": moments,
        "moment_over_p": ratios,
        "ess": ess,
        "p_max": p_max,
        "loglog_slope": slope,
        "poly_class": poly_class,
        "C_star": C_star,
        "exp_ess": exp_ess,
        "exp_class": exp_class,
        "agree": poly_class == exp_class,
        "notes": notes,
    }
