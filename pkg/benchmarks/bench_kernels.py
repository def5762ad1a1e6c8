"""Compare the compiled stencil kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--L 128 256] [--repeat 5]

Both backends are imported directly, so no environment switch is needed.
"""

import argparse
import time

import numpy as np

from homlab import _kernels_py
from homlab.fields import EnsembleModel, GridSpec, sample_field
from homlab.solver import assemble_operator

try:
    from homlab import _ckernels
except ImportError:
    _ckernels = None


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench(L, repeat, tol=1e-8):
    fld = sample_field(EnsembleModel.block_lognormal(1, 1.0), GridSpec(2, L), 7)
    op = assemble_operator(fld)
    A = op._A3
    shp = A.shape[1:]
    u = np.random.default_rng(0).normal(size=shp)
    b = op.div_T(op.constant_flux(0)).reshape(shp)
    b = np.ascontiguousarray(b - b.mean())
    x0 = np.zeros_like(b)
    rows = []
    backends = [("python", _kernels_py)] + ([("cython", _ckernels)] if _ckernels else [])
    ref = None
    for name, mod in backends:
        t_apply, y = _best(lambda: mod.apply_diag(A, u, op.h), repeat)
        t_pcg, (x, it, res) = _best(lambda: mod.pcg_diag(A, b, x0, tol, 10 * L * L, op.h), max(1, repeat // 2))
        if ref is None:
            ref = (y, x)
        dev = max(float(np.abs(y - ref[0]).max()), float(np.abs(x - ref[1]).max()))
        rows.append((L, name, t_apply * 1e3, t_pcg, it, dev))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--L", type=int, nargs="+", default=[64, 128, 256])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled extension not built; timing the numpy fallback only")
    print(f"{'L':>5} {'backend':>8} {'apply ms':>10} {'pcg s':>8} {'iters':>6} {'max dev':>10}")
    for L in args.L:
        rows = bench(L, args.repeat)
        for L_, name, ta, tp, it, dev in rows:
            print(f"{L_:>5} {name:>8} {ta:>10.3f} {tp:>8.3f} {it:>6d} {dev:>10.2e}")
        if len(rows) == 2:
            print(f"{'':>5} {'speedup':>8} {rows[0][2] / rows[1][2]:>10.1f} {rows[0][3] / rows[1][3]:>8.1f}")


if __name__ == "__main__":
    main()
