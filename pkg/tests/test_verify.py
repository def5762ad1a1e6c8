import numpy as np
import pytest

from homlab.fields import GridSpec
from homlab.verify import SUITES, cubic_eigenvalues, dense_pinned_solve, loop_matrix, random_spd_field, run_verify
from homlab.solver import assemble_operator

from conftest import scalar_field


def test_all_suites_pass():
    rep = run_verify(0)
    assert rep["passed"], rep["failed"]
    assert set(rep["suites"]) == set(SUITES)


def test_sigma_fault_is_caught():
    rep = run_verify(0, inject_sigma_fault=True, suites=("sigma",))
    assert not rep["passed"] and rep["fault_injected"]
    assert all(name.startswith("sigma") for name in rep["failed"])


def test_cubic_eigenvalues():
    m = np.random.default_rng(0).normal(size=(3, 3))
    m = m + m.T
    assert np.allclose(np.sort(cubic_eigenvalues(m)), np.linalg.eigvalsh(m))


def test_loop_matrix_agrees_with_operator():
    f = scalar_field(4, 7)
    assert np.allclose(loop_matrix(f), assemble_operator(f).matrix().toarray())
    b = np.random.default_rng(1).normal(size=16)
    x = dense_pinned_solve(loop_matrix(f), b)
    assert np.allclose(loop_matrix(f) @ x, b - b.mean())


def test_random_spd_field_is_spd():
    f = random_spd_field(GridSpec(2, 6, require_pow2=False), 3)
    assert np.linalg.eigvalsh(f.matrices()).min() > 0
