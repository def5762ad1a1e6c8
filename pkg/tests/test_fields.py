import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from homlab.fields import (
    CoefficientField, EnsembleModel, GridSpec, block_labels, build_partition, check_moment_condition,
    empirical_K, mu_lambda, resample_blocks, sample_field, triu_pairs,
)

from conftest import spd_field


def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec(4, 8)
    with pytest.raises(ValueError):
        GridSpec(2, 12)
    with pytest.raises(ValueError):
        GridSpec(2, 8, h=0.0)
    assert GridSpec(2, 6, require_pow2=False).n_cells == 36
    assert GridSpec(3, 8).n_entries == 6


def test_triu_storage_order():
    assert triu_pairs(2) == [(0, 0), (0, 1), (1, 1)]
    assert triu_pairs(3) == [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]


def test_matrix_round_trip():
    f = spd_field(4, 1)
    g = CoefficientField.from_matrices(f.grid, f.matrices())
    assert np.array_equal(f.entries, g.entries)
    assert f.component(1, 0) is not None
    assert np.array_equal(f.component(0, 1), f.component(1, 0))


def test_rejects_bad_entries():
    g = GridSpec(2, 4)
    with pytest.raises(ValueError):
        CoefficientField(g, np.full((4, 4, 3), np.nan))
    m = np.zeros((4, 4, 2, 2))
    m[..., 0, 1] = 1.0
    with pytest.raises(ValueError):
        CoefficientField.from_matrices(g, m)


def test_model_validation():
    with pytest.raises(ValueError):
        EnsembleModel("Nope")
    with pytest.raises(ValueError):
        EnsembleModel.laminate(values=(1.0, -1.0))
    with pytest.raises(ValueError):
        EnsembleModel.block_lognormal(0)
    with pytest.raises(ValueError):
        EnsembleModel.heavy_tailed(truncation=1.0)
    with pytest.raises(ValueError):
        EnsembleModel.identity(p=1.0)
    with pytest.raises(ValueError):
        EnsembleModel.two_phase(fraction=1.5)


def test_identity_and_laminate_samples():
    g = GridSpec(2, 8)
    assert np.array_equal(sample_field(EnsembleModel.identity(), g, 0).matrices(), np.broadcast_to(np.eye(2), (8, 8, 2, 2)))
    lam = sample_field(EnsembleModel.laminate((1.0, 4.0), period=4), g, 0)
    col = lam.component(0, 0)[:, 0]
    assert col.tolist() == [1, 1, 4, 4] * 2
    assert np.all(lam.component(0, 0) == col[:, None])


def test_laminate_random_phase_is_a_shift():
    g = GridSpec(2, 16)
    m = EnsembleModel.laminate((1.0, 4.0), period=8, random_phase=True)
    base = sample_field(EnsembleModel.laminate((1.0, 4.0), period=8), g, 0).component(0, 0)[:, 0]
    for s in range(5):
        col = sample_field(m, g, s).component(0, 0)[:, 0]
        assert any(np.array_equal(col, np.roll(base, k)) for k in range(8))


def test_sampling_deterministic_and_block_constant():
    m = EnsembleModel.block_lognormal(4, 1.0)
    g = GridSpec(2, 16)
    a = sample_field(m, g, 9)
    assert np.array_equal(a.entries, sample_field(m, g, 9).entries)
    c = a.component(0, 0)
    assert np.all(c[:4, :4] == c[0, 0])
    assert a.is_diagonal()


def test_block_lognormal_log_moments():
    m = EnsembleModel.block_lognormal(1, 0.25)
    c = np.log(sample_field(m, GridSpec(2, 256), 1).component(0, 0))
    assert abs(c.mean()) < 4 * 0.5 / 256
    assert abs(c.var() - 0.25) < 0.02


def test_heavy_tailed_support():
    m = EnsembleModel.heavy_tailed(1, 3.0, 3.0, 100.0)
    mu, lam = mu_lambda(sample_field(m, GridSpec(2, 64), 2))
    assert mu.max() <= 100 + 1e-9 and lam.min() >= 1 / 100 - 1e-12


def test_two_phase_fraction():
    m = EnsembleModel.two_phase(1, 1.0, 4.0, 0.3)
    c = sample_field(m, GridSpec(2, 128), 5).component(0, 0)
    assert set(np.unique(c)) <= {1.0, 4.0}
    assert abs(np.mean(c == 4.0) - 0.3) < 0.03


def test_resample_blocks_is_local():
    m = EnsembleModel.block_lognormal(2, 1.0)
    g = GridSpec(2, 8)
    f = sample_field(m, g, 0)
    r = resample_blocks(f, m, [5], 123)
    changed = block_labels(m, g) == 5
    assert np.array_equal(f.entries[~changed], r.entries[~changed])
    assert not np.array_equal(f.entries[changed], r.entries[changed])


def test_mu_lambda_full_tensor_matches_eigh():
    f = spd_field(4, 3)
    mu, lam = mu_lambda(f)
    ev = np.linalg.eigvalsh(f.matrices())
    assert np.allclose(mu, ev[..., -1]) and np.allclose(lam, ev[..., 0])


def test_empirical_K_constant_field():
    f = CoefficientField.from_scalar(GridSpec(2, 4), 2.0)
    assert math.isclose(empirical_K([f], 4, 4), 2.0 + 0.5)


@given(st.floats(1.01, 50), st.floats(1.01, 50))
def test_moment_condition(p, q):
    s = 1 / p + 1 / q
    assert check_moment_condition(p, q, 2) == (s < 1)
    assert check_moment_condition(p, q, 3) == (s < 2 / 3)
    assert check_moment_condition(2, 2, 2, strict=False) and not check_moment_condition(2, 2, 2)


@pytest.mark.parametrize("beta", [0.0, 0.3, 0.5, 0.8])
@pytest.mark.parametrize("L", [16, 32])
def test_partition_covers_and_bounds(beta, L):
    g = GridSpec(2, L)
    part = build_partition(g, beta)
    cells = np.sort(np.concatenate(part.blocks))
    assert np.array_equal(cells, np.arange(g.n_cells))
    assert part.check()
    assert np.all(part.diam >= 1) and np.isfinite(part.C_d)


def test_partition_beta_zero_is_single_cells():
    part = build_partition(GridSpec(2, 8), 0.0)
    assert len(part) == 64 and np.all(part.diam == 1)


def test_partition_rejects_beta():
    with pytest.raises(ValueError):
        build_partition(GridSpec(2, 8), 1.0)
