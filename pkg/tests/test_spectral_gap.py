import numpy as np
import pytest

from homlab.fields import CoefficientField, EnsembleModel, GridSpec, build_partition, sample_field
from homlab.solver import compute_correctors
from homlab.statistics.spectral_gap import a_hom_batch, block_groups, make_functional, spectral_gap_check


def test_a_hom_batch_matches_solver():
    g = GridSpec(2, 4)
    fields = [sample_field(EnsembleModel.block_lognormal(1, 1.0), g, s) for s in range(3)]
    c = np.stack([f.component(0, 0) for f in fields])
    ref = [compute_correctors(f, 1e-13).a_hom[0, 0] for f in fields]
    assert np.allclose(a_hom_batch(c), ref, rtol=1e-10)


@pytest.mark.parametrize("fn", ["a11_origin", "mu_p_avg", "lambda_q_avg"])
def test_additive_functionals_saturate(fn):
    # for sums of independent block terms the resampling bound is an identity in expectation;
    # mild contrast keeps lambda^-q light-tailed enough for the delta-method SE
    m = EnsembleModel.block_lognormal(1, 0.1)
    out = spectral_gap_check(m, GridSpec(2, 8), fn, N=2000)
    assert out["passed"] and abs(out["ratio"] - 1) < 4 * out["se"] + 1e-12


def test_a_hom_functional_below_bound():
    out = spectral_gap_check(EnsembleModel.two_phase(1, 1.0, 4.0), GridSpec(2, 4), "a_hom_11", N=600)
    assert out["ratio"] < 1 and out["passed"]


def test_groups_partition_blocks():
    m = EnsembleModel.block_lognormal(2, 1.0)
    g = GridSpec(2, 16)
    groups = block_groups(m, g, build_partition(g, 0.5))
    flat = np.sort(np.concatenate(groups))
    assert np.array_equal(flat, np.arange(64))


def test_deterministic_and_invalid_models():
    assert spectral_gap_check(EnsembleModel.identity(), GridSpec(2, 8), "a11_origin", 10)["var"] == 0.0
    with pytest.raises(ValueError):
        spectral_gap_check(EnsembleModel.smooth_lognormal(), GridSpec(2, 8), "a11_origin", 10)
    with pytest.raises(ValueError):
        spectral_gap_check(EnsembleModel.block_lognormal(), GridSpec(2, 32), "a11_origin", 10)
    with pytest.raises(ValueError):
        make_functional("nope", GridSpec(2, 8))


def test_moment_versions_reported():
    out = spectral_gap_check(EnsembleModel.block_lognormal(1, 0.5), GridSpec(2, 8), "a11_origin", N=500)
    assert set(out["P"]) == {2, 3} and all(v["rhs"] > 0 for v in out["P"].values())
