"""Two-scale expansion error on the torus.

Everything runs on one lattice of ``N = Lambda P / delta`` cells per side with
cell width ``h = delta / P`` on a macro torus of side ``Lambda``, so one micro
period is ``P`` cells.  The correctors are computed on that same lattice and therefore
already carry the ``delta`` scaling.

With ``w`` the ball average (radius ``delta``) of the homogenized solution and
``eta_i = D_i^- w`` the expansion error is ``z = u - w - phi_i eta_i``.  It
satisfies the exact discrete identity

    L z = -D^T (g - g_1 + R_phi + R_sigma),
    R_phi_k   = A_k sum_i phi_i D_k eta_i,
    R_sigma_k = -sum_ij sigma_ikj T_k D_j eta_i,

whenever ``div sigma_i = q_i - <q_i>`` and ``sigma`` is skew.  The identity is
only derived for diagonal coefficient fields.
"""

from dataclasses import dataclass, field as dc_field
import math

import numpy as np
from scipy import stats as sps

from .fields import GridSpec, empirical_K, sample_field
from .geometry import ball_average, origin_distance, signed_coords
from .radii import ellipticity_radius, hole_filling_exponent
from .solver import DEFAULT_TOL, assemble_operator, bwd, compute_correctors, fwd, solve_divergence_rhs
from .statistics.growth import mu_regime, mu_weight
from .statistics.montecarlo import run_realizations, seeds

DEFAULT_CELLS_PER_PERIOD = 4
DEFAULT_DELTAS = (1 / 8, 1 / 16, 1 / 32)
DEFAULT_MACRO_LENGTH = 4.0
# wide enough that the O(delta) corrector term dominates the O(delta^2) mollification error
DEFAULT_R = 1.8
# corrector residuals live on the whole torus while |D^T g| is local, so the
# identity needs correctors about 100x tighter than the requested tolerance
CORRECTOR_TOL_FACTOR = 1e-2


class TwoScaleConfigError(ValueError):
    pass


class IdentityViolation(RuntimeError):
    """The discrete two-scale identity failed beyond solver accuracy."""


def bump_field(shape, h, R=DEFAULT_R, axis=0, power=2):
    """Face field ``(1 - |x|^2/R^2)_+^power e_axis`` centred at the origin.

    Component ``k`` is sampled at face centres ``x + h e_k / 2``.
    """
    d = len(shape)
    coords = [c.astype(float) * h for c in signed_coords(shape)]
    g = np.zeros((d,) + tuple(shape))
    c = [x.copy() for x in coords]
    c[axis] = c[axis] + 0.5 * h
    r2 = sum(x**2 for x in c) / R**2
    g[axis] = np.clip(1.0 - r2, 0.0, None) ** power
    return g


def face_field_gradient(g, h):
    """Forward differences ``[k, m] = D_m g_k``."""
    d = g.shape[0]
    return np.stack([np.stack([fwd(g[k], m, h) for m in range(d)]) for k in range(d)])


def lp_norm(grad_g, s, h):
    """``(sum |grad g|^s h^d)^(1/s)`` with the Frobenius norm pointwise."""
    d = grad_g.ndim - 2
    mag = np.sqrt(np.sum(grad_g**2, axis=(0, 1)))
    return float(np.sum(mag**s) * h**d) ** (1 / s)


def weighted_norm(grad_g, beta, eps_d, h=1.0):
    """``(sum mu(|x|)^2 |grad g|^2 h^d)^(1/2)``, ``|x|`` measured in units of ``h``-scaled lattice length."""
    d = grad_g.ndim - 2
    shape = grad_g.shape[2:]
    r = origin_distance(shape) * h
    w = mu_weight(r, beta, eps_d)
    mag2 = np.sum(grad_g**2, axis=(0, 1))
    return float(math.sqrt(np.sum(w**2 * mag2) * h**d))


def hom_symbol(shape, a_hom, h):
    """Fourier symbol of ``sum_ki D_k^T a_ki T_k D_i^-``."""
    d = len(shape)
    thetas = np.meshgrid(*[2 * np.pi * np.fft.fftfreq(n) for n in shape], indexing="ij")
    w = [1.0 - np.exp(-1j * th) for th in thetas]
    sym = sum(a_hom[k, i] * np.conj(w[k]) * w[i] for k in range(d) for i in range(d))
    return sym.real / h**2


def hom_apply(u, a_hom, h):
    d = u.ndim
    out = np.zeros_like(u)
    for k in range(d):
        flux = sum(a_hom[k, i] * np.roll(bwd(u, i, h), -1, axis=k) for i in range(d))
        out += bwd(flux, k, h) * -1.0
    return out


def hom_solve(a_hom, rhs, h):
    """Mean-zero solution of the constant-coefficient problem by FFT."""
    sym = hom_symbol(rhs.shape, a_hom, h)
    sym.flat[0] = 1.0
    hat = np.fft.fftn(rhs - rhs.mean()) / sym
    hat.flat[0] = 0.0
    return np.fft.ifftn(hat).real


def _constant_diagonal(fld):
    if not fld.is_diagonal():
        return None
    d = fld.grid.d
    c = np.array([fld.component(k, k).ravel()[0] for k in range(d)])
    if all(np.all(fld.component(k, k) == c[k]) for k in range(d)):
        return np.diag(c)
    return None


def heterogeneous_solve(op, g, tol):
    """``u`` with ``L u = -D^T g``; exact FFT path for spatially constant fields."""
    const = _constant_diagonal(op.field)
    if const is not None:
        return hom_solve(const, -op.div_T(g), op.h), True
    u, st = solve_divergence_rhs(op, g, tol)
    return u, st.converged


def identity_remainders(op, sol, eta):
    """``(R_phi, R_sigma)`` face fields."""
    d, h = op.d, op.h
    Rphi = np.zeros((d,) + op.shape)
    Rsig = np.zeros((d,) + op.shape)
    for k in range(d):
        Rphi[k] = op.A[k] * sum(sol.phi[i] * fwd(eta[i], k, h) for i in range(d))
        acc = 0.0
        for i in range(d):
            for j in range(d):
                acc = acc + sol.sigma[i, k, j] * np.roll(fwd(eta[i], j, h), -1, axis=k)
        Rsig[k] = -acc
    return Rphi, Rsig


def twoscale_identity_residual(op, z, g, g1, sol, eta):
    """Relative residual ``|L z + D^T(g - g_1 + R_phi + R_sigma)| / |D^T g|``."""
    Rphi, Rsig = identity_remainders(op, sol, eta)
    res = op.apply(z) + op.div_T(g - g1 + Rphi + Rsig)
    scale = float(np.linalg.norm(op.div_T(g)))
    num = float(np.linalg.norm(res))
    if scale == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return num / scale


@dataclass
class ExpansionPoint:
    delta: float
    seed: int
    energy_error: float
    term1: float
    term2: float
    identity_residual: float
    converged: bool = True
    flags: dict = dc_field(default_factory=dict)


def expansion_error(fld, g, P, tol=DEFAULT_TOL, sol=None, beta=0.0, eps_d=None, q=None, keep=False):
    """Two-scale error for one field on its own lattice; ``P`` cells per micro period.

    Returns an :class:`ExpansionPoint` (with the intermediate fields in
    ``flags['fields']`` when ``keep`` is set).
    """
    if not fld.is_diagonal():
        raise TwoScaleConfigError("the two-scale identity is implemented for diagonal fields only")
    grid = fld.grid
    h, d = grid.h, grid.d
    delta = P * h
    op = assemble_operator(fld)
    sol = compute_correctors(fld, tol * CORRECTOR_TOL_FACTOR, op=op) if sol is None else sol
    u, ok = heterogeneous_solve(op, g, tol)
    u_hom = hom_solve(sol.a_hom, -op.div_T(g), h)
    w = ball_average(u_hom, P)
    g1 = ball_average(g, P, axes=tuple(range(1, d + 1)))
    eta = np.stack([bwd(w, i, h) for i in range(d)])
    z = u - w - np.sum(sol.phi * eta, axis=0)
    gz = op.grad(z)
    err = float(math.sqrt(max(np.sum(op.energy_density(gz)) * h**d, 0.0)))
    ires = twoscale_identity_residual(op, z, g, g1, sol, eta)
    q = 4.0 if q is None else q
    gg = face_field_gradient(g, h)
    t1 = delta ** (1 + d / (2 * q)) * lp_norm(gg, 2 * q / (q - 1), h)
    if eps_d is None or not math.isfinite(eps_d):
        t2 = float("nan")
    else:
        t2 = delta * float(mu_weight(1 / delta, beta, eps_d)) * weighted_norm(gg, beta, eps_d, h)
    pt = ExpansionPoint(delta, fld.seed, err, t1, t2, ires, bool(ok and sol.converged))
    if keep:
        pt.flags["fields"] = {"u": u, "u_hom": u_hom, "w": w, "z": z, "g1": g1, "eta": eta, "sol": sol, "op": op}
    return pt


def _check_scale(model, P, N):
    if model.kind == "Laminate":
        period = int(model.params.get("period", N))
        if period != P:
            raise TwoScaleConfigError(f"laminate period {period} must equal cells_per_period {P}")
    elif model.is_block_model and P % model.block_side:
        raise TwoScaleConfigError(f"block side {model.block_side} does not divide cells_per_period {P}")


def lattice_size(delta, P, macro_length=1.0):
    n = macro_length * P / delta
    N = int(round(n))
    if abs(n - N) > 1e-9 * n or N < 4 or N & (N - 1):
        raise TwoScaleConfigError(f"delta={delta} with {P} cells per period does not give a power-of-two lattice")
    return N


def measure_eps_d(fld, sol, P):
    """Hole-filling slope (``eps * d``) of the affine-driven corrector energy."""
    N = fld.grid.L
    lo, hi = max(2, P // 2), N // 4
    radii = np.unique(np.geomspace(lo, hi, 6).astype(int))
    if radii.size < 3:
        return float("nan")
    w = sol.grad_phi[0].copy()
    w[0] += 1.0
    return float(hole_filling_exponent(fld, w, radii)["slope"])


@dataclass
class TwoScaleResult:
    deltas: list
    points: list
    mean_error: np.ndarray
    order: float
    order_ci: tuple
    eps_d: float
    regime: str
    tol: float
    flags: dict = dc_field(default_factory=dict)

    def csv_rows(self):
        yield ("delta", "energy_error", "term1", "term2", "identity_residual", "seed")
        for p in self.points:
            yield (p.delta, p.energy_error, p.term1, p.term2, p.identity_residual, p.seed)

    def summary(self):
        return {
            "deltas": list(self.deltas),
            "mean_energy_error": [float(v) for v in self.mean_error],
            "order": self.order,
            "order_ci": list(self.order_ci),
            "eps_d": self.eps_d,
            "regime": self.regime,
            "tol": self.tol,
            "max_identity_residual": max((p.identity_residual for p in self.points), default=0.0),
            "flags": self.flags,
        }


def fit_order(deltas, errors, level=0.95):
    x, y = np.log(np.asarray(deltas, float)), np.log(np.asarray(errors, float))
    keep = np.isfinite(y)
    x, y = x[keep], y[keep]
    if x.size < 2:
        return float("nan"), (float("nan"), float("nan"))
    if x.size == 2:
        s = float((y[1] - y[0]) / (x[1] - x[0]))
        return s, (float("nan"), float("nan"))
    res = sps.linregress(x, y)
    half = sps.t.ppf(0.5 + level / 2, x.size - 2) * res.stderr
    return float(res.slope), (float(res.slope - half), float(res.slope + half))


def run_twoscale(model, deltas=DEFAULT_DELTAS, n_realizations=1, master_seed=0, tol=DEFAULT_TOL,
                 cells_per_period=DEFAULT_CELLS_PER_PERIOD, R=DEFAULT_R, d=2, g=None, beta=0.0, eps_d=None,
                 threads=None, strict=True, macro_length=DEFAULT_MACRO_LENGTH):
    """Mean energy error of the two-scale expansion for each ``delta`` and its fitted order.

    ``g`` is a callable ``(shape, h) -> face field``; the default is a smooth
    bump of radius ``R`` pointing along the first axis.
    """
    P = int(cells_per_period)
    deltas = [float(x) for x in deltas]
    sizes = [lattice_size(x, P, macro_length) for x in deltas]
    for N in sizes:
        _check_scale(model, P, N)
    if model.kind == "SmoothLogNormal":
        raise TwoScaleConfigError("the smooth model has no fixed micro period on a refined lattice")
    make_g = g or (lambda shape, h: bump_field(shape, h, R))
    seed_list = seeds(master_seed, n_realizations)
    flags = {"R_below_r_e": [], "aborted": []}
    if eps_d is None:
        # one shared measurement on the coarsest lattice of the first realization
        grid = GridSpec(d, sizes[0], deltas[0] / P)
        fld = sample_field(model, grid, seed_list[0])
        eps_d = measure_eps_d(fld, compute_correctors(fld, tol), P)

    def one(seed):
        out = []
        for delta, N in zip(deltas, sizes):
            grid = GridSpec(d, N, delta / P)
            fld = sample_field(model, grid, seed)
            if not fld.is_diagonal():
                raise TwoScaleConfigError("the two-scale identity is implemented for diagonal fields only")
            sol = compute_correctors(fld, tol * CORRECTOR_TOL_FACTOR)
            K = empirical_K([fld], model.p, model.q)
            r_e, _, _ = ellipticity_radius(fld, model.p, model.q, K)
            below = R / grid.h < r_e
            pt = expansion_error(fld, make_g(grid.shape, grid.h), P, tol, sol, beta, eps_d, model.q)
            pt.flags["R_below_r_e"] = bool(below)
            out.append(pt)
        return out

    results = run_realizations(one, seed_list, threads)
    points = [p for rows in results for p in rows]
    for p in points:
        if p.flags.get("R_below_r_e"):
            flags["R_below_r_e"].append((p.seed, p.delta))
        if not p.converged:
            flags["aborted"].append((p.seed, p.delta))
        if strict and p.converged and p.identity_residual > 100 * tol:
            raise IdentityViolation(
                f"identity residual {p.identity_residual:.3e} > 100*tol at delta={p.delta}, seed={p.seed}"
            )
    mean_err = np.array([
        np.mean([p.energy_error for p in points if p.delta == x and p.converged] or [np.nan]) for x in deltas
    ])
    order, ci = fit_order(deltas, mean_err)
    regime = mu_regime(beta, eps_d) if math.isfinite(eps_d) else "unmeasured"
    return TwoScaleResult(deltas, points, mean_err, order, ci, eps_d, regime, tol, flags)
