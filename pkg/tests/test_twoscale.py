import math

import numpy as np
import pytest

from homlab.fields import CoefficientField, EnsembleModel, GridSpec, sample_field
from homlab.geometry import ball_average
from homlab.solver import assemble_operator, bwd, compute_correctors, laplace_symbol, solve_divergence_rhs
from homlab.twoscale import (
    IdentityViolation, TwoScaleConfigError, bump_field, expansion_error, face_field_gradient, fit_order, hom_apply,
    hom_solve, hom_symbol, lattice_size, lp_norm, run_twoscale, twoscale_identity_residual, weighted_norm,
)


def test_bump_field_support():
    g = bump_field((32, 32), 0.25, R=1.5)
    assert not g[1].any()
    assert g[0][0, 0] == pytest.approx((1 - (0.125 / 1.5) ** 2) ** 2)
    r = np.hypot(*np.meshgrid(np.r_[0:16, -16:0] * 0.25 + 0.125, np.r_[0:16, -16:0] * 0.25, indexing="ij"))
    assert np.all(g[0][r >= 1.5] == 0)


def test_norms_on_linear_field():
    h = 0.5
    g = np.zeros((2, 8, 8))
    g[0] = np.arange(8)[:, None] * h  # slope 1 except across the wrap
    gg = face_field_gradient(g, h)
    mag = np.sqrt(np.sum(gg**2, axis=(0, 1)))
    assert np.allclose(mag[:7], 1.0)
    assert lp_norm(gg, 2, h) == pytest.approx(math.sqrt(np.sum(mag**2) * h**2))
    # bounded regime: the weight is one
    assert weighted_norm(gg, 0.0, 4.0, h) == pytest.approx(lp_norm(gg, 2, h))


def test_hom_solver_round_trip():
    a = np.array([[2.0, 0.3], [0.3, 1.0]])
    rhs = np.random.default_rng(0).normal(size=(16, 16))
    u = hom_solve(a, rhs, 0.25)
    assert np.allclose(hom_apply(u, a, 0.25), rhs - rhs.mean())
    assert np.allclose(hom_symbol((16, 16), np.eye(2), 0.25), laplace_symbol((16, 16), 0.25))


def test_identity_coefficient_reduces_to_mollification():
    P, h = 4, 1 / 16
    grid = GridSpec(2, 64, h)
    fld = sample_field(EnsembleModel.identity(), grid, 0)
    g = bump_field(grid.shape, h, 1.5)
    pt = expansion_error(fld, g, P, 1e-10, keep=True)
    # independent path: CG solve and the ball average of the same solution
    op = assemble_operator(fld)
    u, st = solve_divergence_rhs(op, g, 1e-12)
    gz = op.grad(u - ball_average(u, P))
    ref = math.sqrt(np.sum(gz**2) * h**2)
    assert pt.energy_error == pytest.approx(ref, rel=1e-8)
    assert pt.identity_residual < 1e-10
    assert np.abs(pt.flags["fields"]["sol"].phi).max() < 1e-12


def test_zero_forcing():
    grid = GridSpec(2, 32, 1 / 8)
    fld = sample_field(EnsembleModel.block_lognormal(1, 0.5), grid, 1)
    pt = expansion_error(fld, np.zeros((2, 32, 32)), 4, 1e-10)
    assert pt.energy_error == 0.0 and pt.identity_residual == 0.0 and pt.term1 == 0.0


def test_identity_holds_and_detects_sigma_mutation():
    grid = GridSpec(2, 64, 1 / 16)
    fld = sample_field(EnsembleModel.block_lognormal(1, 0.5), grid, 2)
    tol = 1e-8
    pt = expansion_error(fld, bump_field(grid.shape, grid.h, 1.5), 4, tol, keep=True)
    assert pt.identity_residual <= 100 * tol
    f = pt.flags["fields"]
    sol, op = f["sol"], f["op"]
    bad = sol.sigma.copy()
    noise = np.random.default_rng(0).normal(size=bad.shape[3:])
    bad[0, 0, 1] += 1e-3 * noise
    bad[0, 1, 0] += 1e-3 * noise  # symmetric pollution breaks skewness
    sol.sigma = bad
    res = twoscale_identity_residual(op, f["z"], bump_field(grid.shape, grid.h, 1.5), f["g1"], sol, f["eta"])
    assert res > 10 * 100 * tol


def test_full_tensor_rejected():
    grid = GridSpec(2, 8, 0.25)
    m = np.broadcast_to(np.array([[2.0, 0.5], [0.5, 1.0]]), (8, 8, 2, 2))
    with pytest.raises(TwoScaleConfigError):
        expansion_error(CoefficientField.from_matrices(grid, m), np.zeros((2, 8, 8)), 4)


def test_lattice_and_scale_checks():
    assert lattice_size(1 / 8, 4, 4.0) == 128
    with pytest.raises(TwoScaleConfigError):
        lattice_size(1 / 6, 4, 1.0)
    with pytest.raises(TwoScaleConfigError):
        run_twoscale(EnsembleModel.laminate((1.0, 4.0), period=8), (1 / 8,), cells_per_period=4)
    with pytest.raises(TwoScaleConfigError):
        run_twoscale(EnsembleModel.smooth_lognormal(), (1 / 8,))
    with pytest.raises(TwoScaleConfigError):
        run_twoscale(EnsembleModel.block_lognormal(3), (1 / 8,))


def test_fit_order_exact_power_law():
    d = np.array([1 / 8, 1 / 16, 1 / 32])
    s, ci = fit_order(d, 3 * d**1.25)
    assert s == pytest.approx(1.25) and ci[0] == pytest.approx(1.25)
    assert math.isnan(fit_order([0.1], [1.0])[0])


def test_run_twoscale_small():
    m = EnsembleModel.laminate((1.0, 4.0), period=4, random_phase=True)
    res = run_twoscale(m, (1 / 4, 1 / 8), 2, tol=1e-9, macro_length=2.0, threads=1)
    rows = list(res.csv_rows())
    assert rows[0] == ("delta", "energy_error", "term1", "term2", "identity_residual", "seed")
    assert len(rows) == 5
    assert res.summary()["max_identity_residual"] <= 1e-7
    assert np.all(np.isfinite(res.mean_error)) and res.mean_error[1] < res.mean_error[0]


def test_strict_mode_raises(monkeypatch):
    import homlab.twoscale as ts
    real = ts.twoscale_identity_residual
    monkeypatch.setattr(ts, "twoscale_identity_residual", lambda *a: 1.0 + 0 * real(*a))
    with pytest.raises(IdentityViolation):
        run_twoscale(EnsembleModel.laminate((1.0, 4.0), period=4), (1 / 4,), 1, macro_length=2.0, eps_d=4.0)
