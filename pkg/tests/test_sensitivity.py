import numpy as np
import pytest
from hypothesis import given, strategies as st

from homlab.fields import CoefficientField, EnsembleModel, GridSpec, build_partition, sample_field
from homlab.statistics.sensitivity import (
    corrector_functionals, direction_dictionary, fit_envelope_constant, perturbed_field, predicted_envelope,
    sensitivity_probe, sqrt_spd, test_fields as make_test_fields,
)

from conftest import first_order


@pytest.mark.parametrize("k", range(8))
def test_finite_difference_matches_first_order(k):
    g = GridSpec(2, 8)
    fld = CoefficientField.from_scalar(g, 1.0)
    gs = make_test_fields(fld, [2])
    b = direction_dictionary(2, 0)[k]
    cell = np.array([3 * 8 + 2])
    t = 1e-5
    pf, ps = corrector_functionals(perturbed_field(fld, cell, b, t), gs)
    bf, bs = corrector_functionals(fld, gs)
    fd = np.r_[(pf - bf)[0], (ps - bs)[0]] / t
    ref = np.r_[first_order(8, cell, b, gs[0])]
    assert np.linalg.norm(fd - ref) <= 1e-2 * np.linalg.norm(ref)


def test_direction_dictionary():
    dirs = direction_dictionary(3, 4)
    assert len(dirs) == 18
    for b in dirs:
        assert np.allclose(b, b.T) and np.isclose(np.abs(np.linalg.eigvalsh(b)).max(), 1.0)


@given(st.integers(0, 10**6))
def test_sqrt_spd(seed):
    m = np.random.default_rng(seed).normal(size=(5, 3, 3))
    a = m @ np.swapaxes(m, -1, -2) + np.eye(3)
    s = sqrt_spd(a)
    assert np.allclose(s @ s, a)


def test_perturbation_is_local():
    fld = sample_field(EnsembleModel.block_lognormal(1, 1.0), GridSpec(2, 8), 0)
    p = perturbed_field(fld, np.array([5, 6]), direction_dictionary(2)[3], 0.1)
    diff = np.any(p.entries != fld.entries, axis=-1).ravel()
    assert set(np.flatnonzero(diff)) <= {5, 6}


def test_test_field_normalisation():
    fld = sample_field(EnsembleModel.block_lognormal(1, 1.0), GridSpec(2, 16), 0)
    from homlab.geometry import ball_mask
    for r, g in zip([2, 4], make_test_fields(fld, [2, 4])):
        mask = ball_mask(fld.grid.shape, r)
        inv = 1 / fld.component(0, 0)
        assert np.isclose(np.sqrt(np.mean(inv[mask] * g[0][mask] ** 2)), r ** -2.0)


def test_probe_richardson_and_shapes():
    fld = sample_field(EnsembleModel.block_lognormal(1, 0.5), GridSpec(2, 8), 3)
    part = build_partition(fld.grid, 0.5)
    out = sensitivity_probe(fld, part, [1, 2, 4])
    assert out["richardson_ok"] and out["sup_phi"].shape == (len(part), 3)
    assert np.allclose(out["aggregate"], out["aggregate_phi"] + out["aggregate_sigma"])
    assert out["aggregate"][0] > out["aggregate"][-1]


def test_envelope_helpers():
    r = np.array([1.0, 2.0, 4.0])
    env = predicted_envelope(r, 3.0, 0.5, 0.0, 2)
    assert np.allclose(env, ((r + 3) ** 0.5 / r) ** 2)
    assert fit_envelope_constant(7 * env, env) == pytest.approx(7)
