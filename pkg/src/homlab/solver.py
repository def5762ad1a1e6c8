"""Finite-volume discretization of ``-div(a grad)`` on the torus and corrector solves.

Conventions
-----------
Scalar unknowns live on cells.  Vector quantities (gradients, fluxes) live on
faces: component ``k`` at index ``x`` is the face between cells ``x`` and
``x + e_k``.  The face gradient is ``D_k u = (u(x+e_k) - u(x)) / h`` and its
adjoint is ``(D_k^T F)(x) = (F(x-e_k) - F(x)) / h``, so ``D^T`` is the
negative divergence.

The normal face coefficient is the normal component of the matrix harmonic
mean of the two adjacent cell matrices.  Off-diagonal couplings, when present,
are averaged onto lattice vertices (cell corners) and transferred between
faces by the averaging operators ``P_j``.
"""

from dataclasses import dataclass, field as dc_field
from itertools import product
import math
import time

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from ._kernels_py import pcg as _pcg_generic
from .io import field_hash

DEFAULT_TOL = 1e-9
SCHEME_DIAG = "fv-harmonic-tpfa"
SCHEME_FULL = "fv-harmonic-tpfa+vertex-cross"


class SolverError(RuntimeError):
    """A linear solve failed to meet its tolerance."""


def fwd(u, k, h=1.0):
    return (np.roll(u, -1, axis=k) - u) / h


def bwd(u, k, h=1.0):
    return (u - np.roll(u, 1, axis=k)) / h


class DiscreteOperator:
    def __init__(self, fld):
        self.field = fld
        g = fld.grid
        self.d, self.h, self.shape = g.d, g.h, g.shape
        self.diagonal = fld.is_diagonal()
        self.limited_vertices = 0
        self.scheme = SCHEME_DIAG if self.diagonal else SCHEME_FULL
        d = self.d
        if self.diagonal:
            A = []
            for k in range(d):
                c = fld.component(k, k)
                cn = np.roll(c, -1, axis=k)
                A.append(2.0 * c * cn / (c + cn))
            self.A = np.stack(A)
            self.cross = {}
        else:
            mats = fld.matrices()
            inv = np.linalg.inv(mats)
            A = []
            for k in range(d):
                hm = np.linalg.inv(inv + np.roll(inv, -1, axis=k))
                A.append(2.0 * hm[..., k, k])
            self.A = np.stack(A)
            self.cross = {}
            for k, j in product(range(d), range(d)):
                if k != j:
                    c = fld.component(k, j)
                    self.cross[(k, j)] = sum(
                        np.roll(c, [-s for s in shift], axis=tuple(range(d))) for shift in product((0, 1), repeat=d)
                    ) / 2**d
            self._limit_cross()
        bad = ~np.isfinite(self.A) | (self.A < 1e-300)
        if np.any(bad):
            k, *x = np.argwhere(bad)[0]
            raise ValueError(f"numerically singular face coefficient on axis {k} at cell {tuple(int(v) for v in x)}")
        pad = np.zeros((3,) + self.shape + (1,) * (3 - d))
        pad[:d] = self.A.reshape((d,) + pad.shape[1:])
        self._A3 = np.ascontiguousarray(pad)
        dsum = sum(self.A[k] + np.roll(self.A[k], 1, axis=k) for k in range(d))
        self.dinv = 1.0 / (np.maximum(dsum, 1e-300) / self.h**2)

    def _limit_cross(self, theta=0.99):
        """Shrink vertex couplings where they would make the operator indefinite.

        The normal part dominates ``sum_v [sum_k Amin_k(v) (P_k w)^2 + sum_{k!=j} abar_kj (P_k w)(P_j w)]``
        with ``Amin_k(v)`` the smallest normal coefficient among the faces
        averaged by ``P_k`` at ``v``, so the energy stays positive when each
        vertex matrix is positive definite.  Off-diagonals are scaled down only
        at vertices where that fails (strong, rapidly rotating anisotropy).
        """
        d = self.d
        axes = tuple(range(d))
        amin = []
        for k in range(d):
            shifts = [s for s in product((0, 1), repeat=d) if s[k] == 0]
            amin.append(np.minimum.reduce([np.roll(self.A[k], [-v for v in s], axis=axes) for s in shifts]))
        root = np.sqrt(np.stack(amin, axis=-1))
        C = np.zeros(self.shape + (d, d))
        for (k, j), c in self.cross.items():
            C[..., k, j] = c / (root[..., k] * root[..., j])
        lo = np.linalg.eigvalsh(C)[..., 0]
        scale = np.where(lo < -theta, theta / np.maximum(-lo, 1e-300), 1.0)
        self.limited_vertices = int(np.count_nonzero(scale < 1.0))
        if self.limited_vertices:
            for key in self.cross:
                self.cross[key] = self.cross[key] * scale

    # basic lattice calculus
    def grad(self, u):
        return np.stack([fwd(u, k, self.h) for k in range(self.d)])

    def div_T(self, F):
        """``D^T F`` (negative discrete divergence of a face field)."""
        return sum(-bwd(F[k], k, self.h) for k in range(self.d))

    def _P(self, w, j):
        axes = tuple(range(self.d))
        shifts = [s for s in product((0, 1), repeat=self.d) if s[j] == 0]
        return sum(np.roll(w, [-v for v in s], axis=axes) for s in shifts) / 2 ** (self.d - 1)

    def _PT(self, V, j):
        axes = tuple(range(self.d))
        shifts = [s for s in product((0, 1), repeat=self.d) if s[j] == 0]
        return sum(np.roll(V, list(s), axis=axes) for s in shifts) / 2 ** (self.d - 1)

    def flux(self, w):
        """Face flux ``F(w)`` of a face vector field ``w`` (shape ``(d, *grid)``)."""
        F = self.A * w
        if self.cross:
            Pw = [self._P(w[j], j) for j in range(self.d)]
            for k in range(self.d):
                V = sum(self.cross[(k, j)] * Pw[j] for j in range(self.d) if j != k)
                F[k] += self._PT(V, k)
        return F

    def constant_flux(self, i):
        """``F(e_i)``."""
        F = np.zeros((self.d,) + self.shape)
        F[i] = self.A[i]
        for k in range(self.d):
            if k != i and self.cross:
                F[k] = self._PT(self.cross[(k, i)], k)
        return F

    def apply(self, u):
        if self.diagonal:
            out = kernels.apply_diag(self._A3, np.ascontiguousarray(u, dtype=np.float64).reshape(self._A3.shape[1:]), self.h)
            return out.reshape(self.shape)
        return self.div_T(self.flux(self.grad(u)))

    def energy_density(self, w):
        """Per-face-sum energy ``sum_k w_k F(w)_k`` (cell-indexed)."""
        return np.sum(w * self.flux(w), axis=0)

    def condition_estimate(self):
        return float(self.A.max() / self.A.min())

    def default_maxiter(self):
        L = self.shape[0]
        return int(max(200, 50 * L * math.sqrt(self.condition_estimate())))

    def matrix(self):
        """Sparse matrix ``G^T W G`` of the operator (row-major cell ordering).

        ``G`` stacks the face-difference matrices and ``W`` is the face-to-face
        coefficient matrix (normal coefficients on the diagonal, vertex
        couplings off it).
        """
        st = _structure(self.shape, self.h)
        vals = [self.A.ravel()]
        rows = [st["diag"]]
        cols = [st["diag"]]
        if self.cross:
            for (k, j), (r, c, v) in st["pairs"].items():
                rows.append(r)
                cols.append(c)
                vals.append(self.cross[(k, j)].ravel()[v] / 4 ** (self.d - 1))
        nf = self.d * int(np.prod(self.shape))
        W = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nf, nf))
        return (st["GT"] @ W @ st["G"]).tocsr()


_STRUCT = {}


def _structure(shape, h):
    key = (tuple(shape), float(h))
    if key in _STRUCT:
        return _STRUCT[key]
    d, n = len(shape), int(np.prod(shape))
    idx = np.arange(n).reshape(shape)
    axes = tuple(range(d))

    def shifted(s):
        return np.roll(idx, [-v for v in s], axis=axes).ravel()

    blocks = []
    for k in range(d):
        e = [0] * d
        e[k] = 1
        blocks.append(sp.csr_matrix(
            (np.concatenate([np.ones(n), -np.ones(n)]) / h,
             (np.concatenate([np.arange(n)] * 2), np.concatenate([shifted(e), np.arange(n)]))),
            shape=(n, n)))
    G = sp.vstack(blocks).tocsr()
    pairs = {}
    for k, j in product(range(d), range(d)):
        if k == j:
            continue
        r, c, v = [], [], []
        for s in product((0, 1), repeat=d):
            if s[k]:
                continue
            for t in product((0, 1), repeat=d):
                if t[j]:
                    continue
                r.append(k * n + shifted(s))
                c.append(j * n + shifted(t))
                v.append(np.arange(n))
        pairs[(k, j)] = (np.concatenate(r), np.concatenate(c), np.concatenate(v))
    st = {"G": G, "GT": G.T.tocsr(), "diag": np.arange(d * n), "pairs": pairs}
    if len(_STRUCT) > 16:
        _STRUCT.clear()
    _STRUCT[key] = st
    return st


def assemble_operator(fld, scheme="fv"):
    if scheme not in ("fv", SCHEME_DIAG, SCHEME_FULL):
        raise ValueError(f"unknown scheme {scheme!r}")
    return DiscreteOperator(fld)


@dataclass
class SolveStats:
    iterations: int
    residual: float
    converged: bool
    method: str


def solve(op, b, tol=DEFAULT_TOL, method="cg", x0=None, maxiter=None):
    """Mean-zero solution of ``L u = b``; ``b`` is projected to mean zero."""
    b = np.asarray(b, dtype=np.float64)
    b = b - b.mean()
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(op.shape), SolveStats(0, 0.0, True, method)
    if method == "direct":
        M = op.matrix()[1:, 1:].tocsc()
        x = np.zeros(b.size)
        x[1:] = spla.splu(M).solve(b.ravel()[1:])
        u = (x - x.mean()).reshape(op.shape)
        it = 0
    elif method == "cg":
        maxiter = op.default_maxiter() if maxiter is None else int(maxiter)
        x0 = np.zeros(op.shape) if x0 is None else np.asarray(x0, dtype=np.float64)
        if op.diagonal:
            shp = op._A3.shape[1:]
            u, it, _ = kernels.pcg_diag(op._A3, np.ascontiguousarray(b.reshape(shp)), np.ascontiguousarray(x0.reshape(shp)), tol, maxiter, op.h)
            u = np.asarray(u).reshape(op.shape)
        else:
            u, it, _ = _pcg_generic(op.apply, b, op.dinv, x0, tol, maxiter)
    else:
        raise ValueError(f"unknown method {method!r}")
    res = float(np.linalg.norm(op.apply(u) - b)) / bnorm
    # the recursive residual can drift below the true one; allow a small margin
    return u, SolveStats(int(it), res, res <= max(tol, 1e-13) * 10, method)


def solve_corrector(op, i, tol=DEFAULT_TOL, method="cg", x0=None):
    """Corrector ``phi_i`` and its face gradient."""
    b = -op.div_T(op.constant_flux(i))
    phi, st = solve(op, b, tol, method, x0)
    return phi, op.grad(phi), st


def compute_flux(op, grad_phi, i):
    w = grad_phi.copy()
    w[i] += 1.0
    return op.flux(w)


def solve_divergence_rhs(op, g, tol=DEFAULT_TOL, method="cg", x0=None):
    """Mean-zero ``u`` with ``-div(a grad u) = div g`` for a face field ``g``."""
    g = np.asarray(g, dtype=np.float64)
    return solve(op, -op.div_T(g), tol, method, x0)


# ---------------------------------------------------------------------------
# flux corrector


def laplace_symbol(shape, h=1.0):
    sym = np.zeros(shape)
    for k, n in enumerate(shape):
        th = 2 * np.pi * np.arange(n) / n
        view = [1] * len(shape)
        view[k] = n
        sym = sym + ((2 - 2 * np.cos(th)) / h**2).reshape(view)
    return sym


def poisson_fft(rhs, h=1.0):
    """Zero-mean solution of ``-Lap s = rhs - mean(rhs)`` on the torus."""
    sym = laplace_symbol(rhs.shape, h)
    sym.flat[0] = 1.0
    hat = np.fft.fftn(rhs) / sym
    hat.flat[0] = 0.0
    return np.fft.ifftn(hat).real


def solve_flux_corrector(q, h=1.0):
    """Skew potential ``sigma[k, j]`` of a face flux ``q`` (shape ``(d, *grid)``).

    ``sigma[k, j]`` sits on the edge ``x + e_k/2 + e_j/2`` and solves
    ``-Lap sigma_kj = D_k q_j - D_j q_k``.  Only ``k < j`` is solved; the
    other half is filled by exact negation.
    """
    d = q.shape[0]
    sig = np.zeros((d, d) + q.shape[1:])
    for k in range(d):
        for j in range(k + 1, d):
            s = poisson_fft(fwd(q[j], k, h) - fwd(q[k], j, h), h)
            sig[k, j] = s
            sig[j, k] = -s
    return sig


def div_sigma(sig, h=1.0):
    """``(div sigma)_k = sum_j D_j^- sigma[k, j]`` on the ``k`` faces."""
    d = sig.shape[0]
    return np.stack([sum(bwd(sig[k, j], j, h) for j in range(d)) for k in range(d)])


def sigma_residual(sig, q, h=1.0):
    """Max-norm of ``div sigma - (q - mean q)``."""
    dq = q - q.reshape(q.shape[0], -1).mean(axis=1).reshape((-1,) + (1,) * (q.ndim - 1))
    return float(np.max(np.abs(div_sigma(sig, h) - dq)))


# ---------------------------------------------------------------------------
# full extended-corrector computation


@dataclass
class CorrectorSolution:
    phi: np.ndarray          # (d, *grid)
    grad_phi: np.ndarray     # (d, d, *grid): [i, k] = D_k phi_i
    flux: np.ndarray         # (d, d, *grid): [i, k] = (q_i)_k
    sigma: np.ndarray        # (d, d, d, *grid): [i, k, j]
    a_hom: np.ndarray
    stats: list
    tol: float
    h: float
    scheme: str
    field_hash: str = ""
    sigma_residual: float = 0.0
    wall_time: float = 0.0
    flags: dict = dc_field(default_factory=dict)

    @property
    def d(self):
        return self.phi.shape[0]

    @property
    def converged(self):
        return all(s.converged for s in self.stats)

    @property
    def residuals(self):
        return [s.residual for s in self.stats]

    @property
    def grad_sigma(self):
        """Forward differences ``[i, k, j, m] = D_m^+ sigma_ikj``."""
        d = self.d
        return np.stack([_fwd_axis(self.sigma, 3 + m, self.h) for m in range(d)], axis=3)

    def phi_xi(self, xi):
        return np.tensordot(np.asarray(xi, dtype=float), self.phi, axes=1)


def _fwd_axis(a, axis, h):
    return (np.roll(a, -1, axis=axis) - a) / h


def homogenized_matrix(flux):
    """``a_hom[k, i] = mean of (q_i)_k``."""
    d = flux.shape[0]
    return flux.reshape(d, d, -1).mean(axis=2).T.copy()


def voigt_reuss(fld, a_hom, tol=1e-8):
    """Check harmonic-mean <= a_hom <= arithmetic-mean as quadratic forms."""
    mats = fld.matrices().reshape(-1, fld.grid.d, fld.grid.d)
    upper = mats.mean(axis=0)
    lower = np.linalg.inv(np.linalg.inv(mats).mean(axis=0))
    sym = 0.5 * (a_hom + a_hom.T)
    gap_lo = float(np.linalg.eigvalsh(sym - lower).min())
    gap_hi = float(np.linalg.eigvalsh(upper - sym).min())
    scale = max(1.0, float(np.abs(upper).max()))
    return {
        "lower": lower,
        "upper": upper,
        "lower_gap": gap_lo,
        "upper_gap": gap_hi,
        "lower_ok": gap_lo >= -tol * scale,
        "upper_ok": gap_hi >= -tol * scale,
        # the lower bound is exact only for diagonal fields with this scheme
        "lower_guaranteed": fld.is_diagonal(),
    }


def compute_correctors(fld, tol=DEFAULT_TOL, method="cg", with_sigma=True, op=None):
    """Extended corrector ``(phi, sigma)``, fluxes and ``a_hom`` for one field."""
    t0 = time.perf_counter()
    op = op or assemble_operator(fld)
    d = fld.grid.d
    phis, grads, fluxes, stats = [], [], [], []
    for i in range(d):
        phi, gphi, st = solve_corrector(op, i, tol, method)
        phis.append(phi)
        grads.append(gphi)
        fluxes.append(compute_flux(op, gphi, i))
        stats.append(st)
    flux = np.stack(fluxes)
    a_hom = homogenized_matrix(flux)
    h = fld.grid.h
    if with_sigma:
        sigma = np.stack([solve_flux_corrector(flux[i], h) for i in range(d)])
        sres = max(sigma_residual(sigma[i], flux[i], h) for i in range(d))
    else:
        sigma = np.zeros((d, d, d) + fld.grid.shape)
        sres = float("nan")
    qscale = max(1.0, float(np.abs(flux).max()))
    flags = {
        "converged": all(s.converged for s in stats),
        "sigma_consistent": (not with_sigma) or sres <= 100 * max(tol, 1e-12) * qscale,
        "limited_vertices": op.limited_vertices,
    }
    vr = voigt_reuss(fld, a_hom)
    flags["voigt_reuss"] = bool(vr["upper_ok"] and vr["lower_ok"])
    return CorrectorSolution(
        phi=np.stack(phis),
        grad_phi=np.stack(grads),
        flux=flux,
        sigma=sigma,
        a_hom=a_hom,
        stats=stats,
        tol=tol,
        h=h,
        scheme=op.scheme,
        field_hash=field_hash(fld),
        sigma_residual=sres,
        wall_time=time.perf_counter() - t0,
        flags=flags,
    )


def orthogonality_defect(sol):
    """``max_ij |mean_faces sum_k D_k phi_i q_jk|``."""
    d = sol.d
    out = 0.0
    for i in range(d):
        for j in range(d):
            out = max(out, abs(float(np.mean(np.sum(sol.grad_phi[i] * sol.flux[j], axis=0)))))
    return out


def energy_matrix(sol):
    """``mean (e_i + D phi_i) . F(e_j + D phi_j)``."""
    d = sol.d
    W = sol.grad_phi.copy()
    for i in range(d):
        W[i, i] += 1.0
    return np.array([[float(np.mean(np.sum(W[i] * sol.flux[j], axis=0))) for j in range(d)] for i in range(d)])
