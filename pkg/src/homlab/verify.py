"""Self-check suites on tiny lattices against dense or closed-form oracles.

``run_verify`` returns a structured report with one entry per check.  With
``inject_sigma_fault`` the flux corrector inside the sigma suite is polluted by
a symmetric (non-skew) tensor, which must fail exactly the sigma checks.
"""

import math
import os
import tempfile
import time

import numpy as np
import scipy.linalg as sla

from .fields import (CoefficientField, EnsembleModel, GridSpec, build_partition, empirical_K, mu_lambda,
                     sample_field)
from .io import field_bytes, parse_field, read_field, write_field
from .radii import radius_report
from .solver import (assemble_operator, compute_correctors, orthogonality_defect, solve, solve_corrector,
                     sigma_residual, voigt_reuss)

SUITES = ("assembly", "dense_solve", "eigen", "closed_form", "sigma", "sensitivity", "efron_stein",
          "io", "partition", "radii")


def random_spd_field(grid, seed, spread=1.0):
    """Full-tensor field with random rotations and log-normal eigenvalues."""
    gen = np.random.default_rng(seed)
    n, d = grid.n_cells, grid.d
    Q, _ = np.linalg.qr(gen.normal(size=(n, d, d)))
    ev = np.exp(spread * gen.normal(size=(n, d)))
    mats = np.einsum("nij,nj,nkj->nik", Q, ev, Q)
    return CoefficientField.from_matrices(grid, mats.reshape(grid.shape + (d, d)), "random-spd", seed)


def loop_matrix(fld):
    """Dense two-point-flux matrix built face by face (diagonal fields)."""
    g = fld.grid
    d, n, h = g.d, g.n_cells, g.h
    M = np.zeros((n, n))
    idx = np.arange(n).reshape(g.shape)
    comps = [fld.component(k, k) for k in range(d)]
    for x in np.ndindex(*g.shape):
        a = idx[x]
        for k in range(d):
            y = list(x)
            y[k] = (y[k] + 1) % g.L
            b = idx[tuple(y)]
            c1, c2 = comps[k][x], comps[k][tuple(y)]
            t = 2 * c1 * c2 / (c1 + c2) / h**2
            M[a, a] += t
            M[b, b] += t
            M[a, b] -= t
            M[b, a] -= t
    return M


def apply_matrix(op):
    """Dense matrix from matrix-free applications to unit vectors."""
    n = int(np.prod(op.shape))
    M = np.empty((n, n))
    e = np.zeros(n)
    for j in range(n):
        e[j] = 1.0
        M[:, j] = op.div_T(op.flux(op.grad(e.reshape(op.shape)))).ravel()
        e[j] = 0.0
    return M


def dense_pinned_solve(M, b):
    """Mean-zero solution with the first unknown pinned, by dense LU."""
    b = b - b.mean()
    x = np.zeros(b.size)
    x[1:] = sla.lu_solve(sla.lu_factor(M[1:, 1:]), b[1:])
    return x - x.mean()


def cubic_eigenvalues(m):
    """Eigenvalues of a symmetric 3x3 matrix by the trigonometric root formula."""
    q = np.trace(m) / 3
    p1 = m[0, 1] ** 2 + m[0, 2] ** 2 + m[1, 2] ** 2
    p2 = (m[0, 0] - q) ** 2 + (m[1, 1] - q) ** 2 + (m[2, 2] - q) ** 2 + 2 * p1
    p = math.sqrt(p2 / 6)
    if p == 0:
        return q, q, q
    B = (m - q * np.eye(3)) / p
    r = min(1.0, max(-1.0, np.linalg.det(B) / 2))
    phi = math.acos(r) / 3
    e1 = q + 2 * p * math.cos(phi)
    e3 = q + 2 * p * math.cos(phi + 2 * math.pi / 3)
    return e1, 3 * q - e1 - e3, e3


class _Report:
    def __init__(self):
        self.suites = {}

    def add(self, suite, name, value, threshold, passed=None):
        if passed is None:
            passed = bool(value <= threshold)
        self.suites.setdefault(suite, []).append(
            {"check": name, "value": float(value), "threshold": float(threshold), "passed": bool(passed)}
        )

    def error(self, suite, exc):
        self.suites.setdefault(suite, []).append(
            {"check": "exception", "value": float("nan"), "threshold": 0.0, "passed": False, "error": repr(exc)}
        )


def _assembly(rep, seed):
    for L in (4, 6):
        g = GridSpec(2, L, require_pow2=False)
        diag = sample_field(EnsembleModel.block_lognormal(1, 1.0), g, seed)
        op = assemble_operator(diag)
        rep.add("assembly", f"loop_vs_sparse_diag_L{L}", np.abs(loop_matrix(diag) - op.matrix().toarray()).max(), 1e-14)
        full = random_spd_field(g, seed)
        op = assemble_operator(full)
        rep.add("assembly", f"apply_vs_sparse_full_L{L}", np.abs(apply_matrix(op) - op.matrix().toarray()).max(), 1e-13)
    g3 = GridSpec(3, 4)
    op = assemble_operator(random_spd_field(g3, seed))
    M = op.matrix().toarray()
    rep.add("assembly", "symmetric_3d", np.abs(M - M.T).max(), 1e-13)


def _dense_solve(rep, seed, n_seeds=20):
    worst = 0.0
    for L in (4, 6):
        g = GridSpec(2, L, require_pow2=False)
        for s in range(n_seeds):
            for fld in (sample_field(EnsembleModel.block_lognormal(1, 1.0), g, seed + s), random_spd_field(g, seed + s)):
                op = assemble_operator(fld)
                M = op.matrix().toarray()
                for i in range(2):
                    phi, _, _ = solve_corrector(op, i, 1e-13)
                    ref = dense_pinned_solve(M, -op.div_T(op.constant_flux(i)).ravel())
                    worst = max(worst, np.linalg.norm(phi.ravel() - ref) / np.linalg.norm(ref))
                f = np.random.default_rng(seed + s).normal(size=op.shape)
                u, _ = solve(op, f, 1e-13)
                ref = dense_pinned_solve(M, f.ravel())
                worst = max(worst, np.linalg.norm(u.ravel() - ref) / np.linalg.norm(ref))
    rep.add("dense_solve", "cg_vs_lu_relative", worst, 1e-10)


def _eigen(rep, seed):
    g = GridSpec(3, 4)
    fld = random_spd_field(g, seed)
    mu, lam = mu_lambda(fld)
    mats = fld.matrices().reshape(-1, 3, 3)
    ref = np.array([cubic_eigenvalues(m) for m in mats])
    err = max(np.abs(mu.ravel() - ref[:, 0]).max(), np.abs(lam.ravel() - ref[:, 2]).max())
    rep.add("eigen", "mu_lambda_vs_cubic_roots", err, 1e-12)
    one = CoefficientField.from_matrices(GridSpec(2, 4), np.broadcast_to(np.diag([4.0, 0.25]), (4, 4, 2, 2)))
    rep.add("eigen", "K_diag_4_quarter", abs(empirical_K([one], 2, 2) - 8.0), 1e-12)


def _closed_form(rep, seed):
    g = GridSpec(2, 8)
    t0 = time.perf_counter()
    sol = compute_correctors(sample_field(EnsembleModel.identity(), g, seed))
    rep.add("closed_form", "identity_phi", np.abs(sol.phi).max(), 1e-10)
    rep.add("closed_form", "identity_sigma", np.abs(sol.sigma).max(), 1e-10)
    rep.add("closed_form", "identity_a_hom", np.abs(sol.a_hom - np.eye(2)).max(), 1e-10)
    rep.add("closed_form", "identity_runtime_s", time.perf_counter() - t0, 1.0)
    lam = sample_field(EnsembleModel.laminate((1.0, 4.0)), GridSpec(2, 16), seed)
    sol = compute_correctors(lam, 1e-12)
    rep.add("closed_form", "laminate_a_hom", np.abs(sol.a_hom - np.diag([1.6, 2.5])).max(), 1e-8)
    rep.add("closed_form", "laminate_flux_constant", float(np.ptp(sol.flux[0, 0])), 1e-8)
    fld = sample_field(EnsembleModel.block_lognormal(1, 1.0), GridSpec(2, 16), seed)
    sol = compute_correctors(fld, 1e-11)
    vr = voigt_reuss(fld, sol.a_hom)
    rep.add("closed_form", "voigt_reuss", -min(vr["lower_gap"], vr["upper_gap"]), 1e-8)
    rep.add("closed_form", "orthogonality", orthogonality_defect(sol), 1e-8)


def _sigma(rep, seed, inject):
    from .twoscale import bump_field, expansion_error

    g = GridSpec(2, 16, 1 / 4)
    fld = sample_field(EnsembleModel.block_lognormal(1, 0.5), g, seed)
    sol = compute_correctors(fld, 1e-12, method="direct")
    if inject:
        gen = np.random.default_rng(seed)
        bad = gen.normal(size=sol.sigma.shape)
        bad = bad + np.swapaxes(bad, 1, 2)
        sol.sigma = sol.sigma + 1e-3 * bad
    skew = float(np.abs(sol.sigma + np.swapaxes(sol.sigma, 1, 2)).max())
    rep.add("sigma", "skew_symmetry", skew, 0.0)
    res = max(sigma_residual(sol.sigma[i], sol.flux[i], g.h) for i in range(2))
    rep.add("sigma", "divergence", res, 1e-8)
    pt = expansion_error(fld, bump_field(g.shape, g.h, R=1.5), 4, 1e-13, sol=sol)
    rep.add("sigma", "twoscale_identity", pt.identity_residual, 1e-8)


def _sensitivity(rep, seed):
    from .solver import bwd, fwd, poisson_fft, solve_flux_corrector
    from .statistics.sensitivity import corrector_functionals, direction_dictionary, perturbed_field, test_fields
    from itertools import product

    g = GridSpec(2, 8)
    fld = CoefficientField.from_scalar(g, np.ones(g.shape))
    gs = test_fields(fld, [2])
    base = corrector_functionals(fld, gs)
    cell = np.array([3 * 8 + 2])
    worst = 0.0
    for b in direction_dictionary(2, seed):
        t = 1e-5
        pert = corrector_functionals(perturbed_field(fld, cell, b, t), gs)
        fd = np.concatenate([(pert[0] - base[0]) / t, (pert[1] - base[1]) / t], axis=1).ravel()
        B = np.zeros((2, 2) + g.shape)
        for k, j in product(range(2), range(2)):
            B[k, j].flat[cell] = b[k, j]
        vmean = lambda c: sum(np.roll(c, [-s for s in sh], axis=(0, 1)) for sh in product((0, 1), repeat=2)) / 4
        PT = lambda V, j: sum(np.roll(V, list(s), axis=(0, 1)) for s in product((0, 1), repeat=2) if s[j] == 0) / 2
        o_phi, o_sig = [], []
        for i in range(2):
            dF = np.zeros((2,) + g.shape)
            dF[i] = 0.5 * (B[i, i] + np.roll(B[i, i], -1, axis=i))
            for k in range(2):
                if k != i:
                    dF[k] = PT(vmean(B[k, i]), k)
            psi = poisson_fft(sum(bwd(dF[k], k) for k in range(2)))
            gpsi = np.stack([fwd(psi, k) for k in range(2)])
            dsig = solve_flux_corrector(dF + gpsi)
            o_phi.append(np.sum(gs[0] * gpsi))
            gsig = np.stack([np.roll(dsig, -1, axis=2 + m) - dsig for m in range(2)])
            o_sig.append([np.sum(gs[0] * gsig[:, k, j]) for k in range(2) for j in range(2)])
        oracle = np.concatenate([o_phi, np.ravel(o_sig)])
        worst = max(worst, np.linalg.norm(fd - oracle) / max(np.linalg.norm(oracle), 1e-300))
    rep.add("sensitivity", "first_order_expansion", worst, 1e-2)


def _efron_stein(rep, seed):
    from .statistics.spectral_gap import spectral_gap_check

    out = spectral_gap_check(EnsembleModel.block_lognormal(1, 1.0), GridSpec(2, 8), "a11_origin", N=2000,
                             master_seed=seed)
    rep.add("efron_stein", "one_block_identity", abs(out["ratio"] - 1.0), 4 * out["se"])


def _io(rep, seed):
    fld = random_spd_field(GridSpec(3, 4), seed)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "f.dghm")
        write_field(path, fld)
        back = read_field(path)
    same = field_bytes(back) == field_bytes(fld) and np.array_equal(back.entries, fld.entries)
    rep.add("io", "dghm_round_trip", 0.0 if same else 1.0, 0.0)
    bad = bytearray(field_bytes(fld))
    bad[:4] = b"XXXX"
    try:
        parse_field(bytes(bad))
        rejected = False
    except ValueError:
        rejected = True
    rep.add("io", "bad_magic_rejected", 0.0 if rejected else 1.0, 0.0)


def _partition(rep, seed):
    g = GridSpec(2, 16)
    for beta in (0.0, 0.5):
        part = build_partition(g, beta)
        cover = sum(len(b) for b in part.blocks) == g.n_cells and np.unique(np.concatenate(part.blocks)).size == g.n_cells
        rep.add("partition", f"invariant_beta_{beta}", 0.0 if (cover and part.check()) else 1.0, 0.0)


def _radii(rep, seed):
    model = EnsembleModel.block_lognormal(2, 1.0)
    g = GridSpec(2, 16)
    ok = 0
    for s in range(4):
        fld = sample_field(model, g, seed + s)
        rep_ = radius_report(fld, compute_correctors(fld), 4.0, 4.0, 3.0)
        ok += bool(rep_.recheck())
    rep.add("radii", "recheck", 4 - ok, 0.0)


def run_verify(seed=0, inject_sigma_fault=False, suites=SUITES):
    rep = _Report()
    t0 = time.perf_counter()
    runners = {
        "assembly": lambda: _assembly(rep, seed),
        "dense_solve": lambda: _dense_solve(rep, seed),
        "eigen": lambda: _eigen(rep, seed),
        "closed_form": lambda: _closed_form(rep, seed),
        "sigma": lambda: _sigma(rep, seed, inject_sigma_fault),
        "sensitivity": lambda: _sensitivity(rep, seed),
        "efron_stein": lambda: _efron_stein(rep, seed),
        "io": lambda: _io(rep, seed),
        "partition": lambda: _partition(rep, seed),
        "radii": lambda: _radii(rep, seed),
    }
    for name in suites:
        try:
            runners[name]()
        except Exception as exc:  # a crashing suite is a failed suite, others still run
            rep.error(name, exc)
    failed = [f"{s}.{c['check']}" for s, rows in rep.suites.items() for c in rows if not c["passed"]]
    return {
        "passed": not failed,
        "failed": failed,
        "suites": rep.suites,
        "fault_injected": bool(inject_sigma_fault),
        "seconds": time.perf_counter() - t0,
    }
