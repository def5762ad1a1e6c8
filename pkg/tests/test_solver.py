import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, strategies as st

from homlab.fields import CoefficientField, EnsembleModel, GridSpec, sample_field
from homlab.solver import (
    assemble_operator, compute_correctors, div_sigma, energy_matrix, fwd, orthogonality_defect, poisson_fft,
    solve, solve_corrector, solve_flux_corrector, voigt_reuss,
)

from conftest import scalar_field, spd_field


def dense_tpfa(c, h=1.0):
    """Two-point-flux matrix of a scalar field built cell by cell."""
    L = c.shape[0]
    n = L * L
    M = np.zeros((n, n))
    at = lambda i, j: (i % L) * L + (j % L)
    for i in range(L):
        for j in range(L):
            for di, dj in ((1, 0), (0, 1)):
                a, b = c[i, j], c[(i + di) % L, (j + dj) % L]
                t = 2 * a * b / (a + b) / h**2
                p, q = at(i, j), at(i + di, j + dj)
                M[p, p] += t
                M[q, q] += t
                M[p, q] -= t
                M[q, p] -= t
    return M


def dense_rhs(c, axis, h=1.0):
    L = c.shape[0]
    A = 2 * c * np.roll(c, -1, axis) / (c + np.roll(c, -1, axis))
    return ((A - np.roll(A, 1, axis)) / h).ravel()


def pinned(M, b):
    x = np.zeros(b.size)
    x[1:] = sla.lu_solve(sla.lu_factor(M[1:, 1:]), (b - b.mean())[1:])
    return x - x.mean()


@pytest.mark.parametrize("L", [4, 6])
@pytest.mark.parametrize("seed", range(4))
def test_scalar_operator_matches_dense_loop(L, seed):
    f = scalar_field(L, seed)
    op = assemble_operator(f)
    c = f.component(0, 0)
    M = dense_tpfa(c)
    assert np.allclose(op.matrix().toarray(), M, atol=1e-12)
    for i in range(2):
        phi, _, st = solve_corrector(op, i, 1e-13)
        ref = pinned(M, dense_rhs(c, i))
        assert np.linalg.norm(phi.ravel() - ref) <= 1e-10 * np.linalg.norm(ref)


@pytest.mark.parametrize("seed", range(4))
def test_full_tensor_cg_matches_lu(seed):
    f = spd_field(6, seed)
    op = assemble_operator(f)
    M = op.matrix().toarray()
    assert np.allclose(M, M.T, atol=1e-12)
    assert np.linalg.eigvalsh(M).min() > -1e-10
    for i in range(2):
        a = solve_corrector(op, i, 1e-13, "cg")[0]
        b = solve_corrector(op, i, 1e-13, "direct")[0]
        assert np.linalg.norm(a - b) <= 1e-10 * np.linalg.norm(b)


def test_matrix_agrees_with_apply():
    f = spd_field(4, 9)
    op = assemble_operator(f)
    u = np.random.default_rng(0).normal(size=op.shape)
    assert np.allclose(op.matrix() @ u.ravel(), op.apply(u).ravel())


@given(st.integers(0, 10**6), st.floats(0.3, 3.0))
def test_operator_positive_semidefinite(seed, spread):
    f = spd_field(4, seed, spread=spread)
    op = assemble_operator(f)
    assert np.linalg.eigvalsh(op.matrix().toarray()).min() > -1e-9 * max(1.0, spread**2)


def test_cross_limiter_engages_on_strong_anisotropy():
    g = GridSpec(2, 4)
    th = np.random.default_rng(1).uniform(0, np.pi, g.shape)
    R = np.stack([np.stack([np.cos(th), -np.sin(th)], -1), np.stack([np.sin(th), np.cos(th)], -1)], -2)
    D = np.diag([100.0, 0.01])
    mats = R @ D @ np.swapaxes(R, -1, -2)
    op = assemble_operator(CoefficientField.from_matrices(g, 0.5 * (mats + np.swapaxes(mats, -1, -2))))
    assert op.limited_vertices > 0
    assert np.linalg.eigvalsh(op.matrix().toarray()).min() > -1e-9


def test_identity_field_exact():
    sol = compute_correctors(sample_field(EnsembleModel.identity(), GridSpec(2, 16), 0), 1e-12)
    assert np.abs(sol.phi).max() <= 1e-12
    assert np.abs(sol.sigma).max() == 0.0
    assert np.allclose(sol.a_hom, np.eye(2), atol=1e-12)


def test_laminate_closed_form():
    f = sample_field(EnsembleModel.laminate((1.0, 4.0), period=8), GridSpec(2, 64), 0)
    sol = compute_correctors(f, 1e-12)
    # harmonic mean across the layers, arithmetic mean along them
    assert np.allclose(sol.a_hom, np.diag([1.6, 2.5]), atol=1e-8)
    assert np.ptp(sol.flux[0, 0]) <= 1e-8


def test_poisson_fft_inverts_laplacian():
    r = np.random.default_rng(0).normal(size=(16, 16))
    s = poisson_fft(r, 0.5)
    lap = sum((np.roll(s, 1, k) - 2 * s + np.roll(s, -1, k)) / 0.25 for k in range(2))
    assert np.allclose(-lap, r - r.mean())


@pytest.mark.parametrize("d", [2, 3])
def test_flux_corrector_properties(d):
    L = 16 if d == 2 else 8
    f = sample_field(EnsembleModel.block_lognormal(1, 1.0), GridSpec(d, L, 0.5), 4)
    sol = compute_correctors(f, 1e-11)
    for i in range(d):
        s = sol.sigma[i]
        assert np.array_equal(s, -np.swapaxes(s, 0, 1))
        q = sol.flux[i]
        dq = q - q.reshape(d, -1).mean(axis=1).reshape((d,) + (1,) * d)
        assert np.abs(div_sigma(s, 0.5) - dq).max() <= 1e-8
    assert orthogonality_defect(sol) <= 1e-8
    assert np.allclose(energy_matrix(sol), sol.a_hom, atol=1e-8)
    assert sol.flags["voigt_reuss"] and sol.flags["sigma_consistent"]


def test_flux_corrector_of_constant_flux_vanishes():
    q = np.ones((2, 8, 8))
    assert np.abs(solve_flux_corrector(q)).max() == 0.0


@given(st.integers(0, 10**6), st.floats(0.1, 10.0))
def test_scaling_covariance(seed, s):
    f = scalar_field(8, seed, sigma=0.7)
    a = compute_correctors(f, 1e-12)
    b = compute_correctors(f.scaled(s), 1e-12)
    assert np.allclose(b.a_hom, s * a.a_hom, rtol=1e-8)
    assert np.allclose(a.phi, b.phi, atol=1e-8)


@given(st.integers(0, 10**6))
def test_transpose_covariance(seed):
    f = scalar_field(8, seed, sigma=0.7)
    ft = CoefficientField.from_scalar(f.grid, f.component(0, 0).T.copy())
    a = compute_correctors(f, 1e-12).a_hom
    b = compute_correctors(ft, 1e-12).a_hom
    assert np.allclose(a, b[::-1, ::-1], rtol=1e-8)


@given(st.integers(0, 10**6))
def test_voigt_reuss_and_symmetry(seed):
    f = scalar_field(8, seed, sigma=1.2)
    sol = compute_correctors(f, 1e-12)
    vr = voigt_reuss(f, sol.a_hom)
    assert vr["lower_ok"] and vr["upper_ok"]
    assert np.allclose(sol.a_hom, sol.a_hom.T, atol=1e-9)


def test_full_tensor_upper_bound_and_symmetry():
    f = spd_field(8, 2)
    sol = compute_correctors(f, 1e-12)
    assert voigt_reuss(f, sol.a_hom)["upper_ok"]
    assert np.allclose(sol.a_hom, sol.a_hom.T, atol=1e-8)


def test_solve_zero_rhs_and_bad_method():
    op = assemble_operator(scalar_field(4, 0))
    u, st_ = solve(op, np.ones(op.shape))
    assert np.all(u == 0) and st_.converged
    with pytest.raises(ValueError):
        solve(op, np.arange(16.0).reshape(4, 4), method="magic")
    with pytest.raises(ValueError):
        assemble_operator(scalar_field(4, 0), scheme="fem")


def test_forward_difference():
    u = np.arange(8.0)[:, None] * np.ones((8, 8))
    assert np.allclose(fwd(u, 0, 0.5)[:7], 2.0)
