import os
import subprocess
import sys

import numpy as np
import pytest

from homlab import _kernels_py, kernels
from homlab.fields import EnsembleModel, GridSpec, sample_field
from homlab.solver import assemble_operator

try:
    from homlab import _ckernels
except ImportError:  # pragma: no cover
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled extension not built")


def _setup(L=16, d=2):
    fld = sample_field(EnsembleModel.block_lognormal(1, 1.0), GridSpec(d, L), 1)
    op = assemble_operator(fld)
    shp = op._A3.shape[1:]
    u = np.random.default_rng(0).normal(size=shp)
    return op, shp, u


def test_python_apply_is_the_operator():
    op, shp, u = _setup()
    ref = op.div_T(op.flux(op.grad(u.reshape(op.shape))))
    assert np.allclose(_kernels_py.apply_diag(op._A3, u, op.h).reshape(op.shape), ref)


@needs_ext
@pytest.mark.parametrize("d", [2, 3])
def test_backends_agree(d):
    op, shp, u = _setup(8, d)
    a = _kernels_py.apply_diag(op._A3, u, op.h)
    b = np.asarray(_ckernels.apply_diag(op._A3, u, op.h))
    assert np.allclose(a, b, rtol=1e-13, atol=1e-13)
    rhs = u - u.mean()
    xa, ia, _ = _kernels_py.pcg_diag(op._A3, rhs, np.zeros(shp), 1e-10, 1000, op.h)
    xb, ib, _ = _ckernels.pcg_diag(op._A3, np.ascontiguousarray(rhs), np.zeros(shp), 1e-10, 1000, op.h)
    assert ia == ib
    assert np.allclose(xa, np.asarray(xb), atol=1e-9)


def test_pure_python_switch():
    env = dict(os.environ, HOMLAB_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import homlab; print(homlab.BACKEND)"], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    assert kernels.BACKEND in ("python", "cython")
