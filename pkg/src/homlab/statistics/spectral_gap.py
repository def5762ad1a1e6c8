"""Efron-Stein resampling check of the variance bound for independent-block models.

For independent blocks, ``Var X <= 1/2 sum_G E (X - X^(G))^2`` where ``X^(G)``
is ``X`` recomputed after redrawing the blocks of group ``G``.  Groups are the
partition blocks; each model block joins the group of its first cell.
"""

from functools import lru_cache
import math

import numpy as np

from .. import rng
from ..fields import BLOCK_KINDS, block_grid_shape, block_values, build_partition
from ..geometry import ball_mask

FUNCTIONALS = ("a11_origin", "mu_p_avg", "lambda_q_avg", "a_hom_11")


@lru_cache(maxsize=8)
def _gradient_matrix(shape):
    d, n = len(shape), int(np.prod(shape))
    idx = np.arange(n).reshape(shape)
    G = np.zeros((d * n, n))
    for k in range(d):
        nb = np.roll(idx, -1, axis=k).ravel()
        G[k * n + np.arange(n), nb] += 1.0
        G[k * n + np.arange(n), np.arange(n)] -= 1.0
    G.setflags(write=False)
    return G


def a_hom_batch(c, axis=0):
    """``a_hom[axis, axis]`` for a batch of scalar conductance fields ``c`` (shape ``(B, *grid)``).

    Dense pinned solves of the two-point-flux corrector problem; meant for tiny grids.
    """
    c = np.asarray(c, dtype=float)
    B, shape = c.shape[0], c.shape[1:]
    d, n = len(shape), int(np.prod(shape))
    G = _gradient_matrix(shape)
    A = np.concatenate([
        (2 * c * np.roll(c, -1, axis=k + 1) / (c + np.roll(c, -1, axis=k + 1))).reshape(B, n) for k in range(d)
    ], axis=1)
    M = np.einsum("fn,bf,fm->bnm", G, A, G, optimize=True)
    rhs = -np.einsum("fn,bf->bn", G[axis * n:(axis + 1) * n], A[:, axis * n:(axis + 1) * n])
    phi = np.zeros((B, n))
    phi[:, 1:] = np.linalg.solve(M[:, 1:, 1:], rhs[:, 1:, None])[..., 0]
    grad = np.einsum("fn,bn->bf", G[axis * n:(axis + 1) * n], phi)
    return np.mean(A[:, axis * n:(axis + 1) * n] * (1.0 + grad), axis=1)


def make_functional(name, grid, p=4.0, q=4.0, R=4):
    """``(batch function on scalar conductances, support mask or None)``."""
    if name == "a11_origin":
        sup = np.zeros(grid.shape, bool)
        sup[(0,) * grid.d] = True
        return (lambda c: c[(slice(None),) + (0,) * grid.d]), sup
    if name in ("mu_p_avg", "lambda_q_avg"):
        sup = ball_mask(grid.shape, R)
        e = p if name == "mu_p_avg" else -q
        return (lambda c: np.mean(c[:, sup] ** e, axis=1)), sup
    if name == "a_hom_11":
        return (lambda c: a_hom_batch(c, 0)), None
    raise ValueError(f"unknown functional {name!r}; choose from {FUNCTIONALS}")


def _expand(vals, side, d):
    out = vals
    for ax in range(1, d + 1):
        out = np.repeat(out, side, axis=ax)
    return out


def block_groups(model, grid, partition):
    """Disjoint groups of model blocks induced by ``partition``."""
    bshape = block_grid_shape(model, grid)
    side = model.block_side
    anchors = np.stack(np.meshgrid(*[np.arange(n) * side for n in bshape], indexing="ij"), axis=-1).reshape(-1, grid.d)
    labels = partition.labels[tuple(anchors.T)]
    order = np.argsort(labels, kind="stable")
    bounds = np.flatnonzero(np.diff(labels[order])) + 1
    return [g for g in np.split(order, bounds) if g.size]


def _is_deterministic(model):
    return model.kind == "ConstantIdentity" or (model.kind == "Laminate" and not model.params.get("random_phase"))


def spectral_gap_check(model, grid, functional, N=10000, partition=None, master_seed=0, P_list=(2, 3),
                       R=4, chunk=400):
    """Monte Carlo ``Var X`` against the Efron-Stein resampling sum.

    Returns a dict with ``ratio = Var / ES``, its delta-method standard error,
    and the ``P``-moment analogues ``<(X-<X>)^(2P)>^(1/P) / (P^2 <ES_n^P>^(1/P))``.
    """
    if _is_deterministic(model):
        zero = {"var": 0.0, "es": 0.0, "ratio": 0.0, "se": 0.0, "passed": True}
        zero["P"] = {int(P): {"lhs": 0.0, "rhs": 0.0, "ratio": 0.0} for P in P_list}
        return zero
    if model.kind not in BLOCK_KINDS:
        raise ValueError(f"{model.kind} has no independent blocks; the resampling surrogate is undefined")
    if grid.L > 16:
        raise ValueError("spectral-gap check is meant for L <= 16")
    partition = build_partition(grid, 0.0) if partition is None else partition
    fn, support = make_functional(functional, grid, model.p, model.q, R)
    bshape = block_grid_shape(model, grid)
    nb = int(np.prod(bshape))
    side = model.block_side
    groups = block_groups(model, grid, partition)
    if support is not None:
        sup_blocks = set(np.unique(_expand(np.arange(nb).reshape((1,) + bshape), side, grid.d)[0][support]).tolist())
        groups = [g for g in groups if sup_blocks.intersection(g.tolist())]
    offsets = np.concatenate([[0], np.cumsum([g.size for g in groups])])
    flat_groups = np.concatenate(groups) if groups else np.zeros(0, int)
    seed_list = [rng.derive_seed(master_seed, i) for i in range(N)]
    X = np.empty(N)
    Y = np.zeros(N)
    for start in range(0, N, chunk):
        ids = range(start, min(N, start + chunk))
        vals = np.stack([block_values(model, np.arange(nb, dtype=np.uint64), seed_list[i]) for i in ids])
        fresh = np.stack([block_values(model, (nb + np.arange(flat_groups.size)).astype(np.uint64), seed_list[i]) for i in ids])
        x0 = fn(_expand(vals.reshape((-1,) + bshape), side, grid.d))
        X[start:start + len(ids)] = x0
        for gi, g in enumerate(groups):
            v = vals.copy()
            v[:, g] = fresh[:, offsets[gi]:offsets[gi + 1]]
            xg = fn(_expand(v.reshape((-1,) + bshape), side, grid.d))
            Y[start:start + len(ids)] += 0.5 * (x0 - xg) ** 2
    var = float(np.var(X, ddof=1))
    es = float(np.mean(Y))
    if es == 0.0:
        ratio, se = (0.0 if var == 0.0 else math.inf), 0.0
    else:
        ratio = var / es
        infl = ((X - X.mean()) ** 2 - var) / es - var * (Y - es) / es**2
        se = float(np.std(infl, ddof=1) / math.sqrt(N))
    out = {
        "functional": functional,
        "N": N,
        "groups": len(groups),
        "var": var,
        "es": es,
        "ratio": ratio,
        "se": se,
        "passed": bool(ratio <= 1 + 3 * se),
        "P": {},
    }
    for P in P_list:
        lhs = float(np.mean((X - X.mean()) ** (2 * P)) ** (1 / P))
        rhs = float(P**2 * np.mean(Y**P) ** (1 / P))
        out["P"][int(P)] = {"lhs": lhs, "rhs": rhs, "ratio": lhs / rhs if rhs > 0 else 0.0}
    return out


__all__ = ["spectral_gap_check", "a_hom_batch", "make_functional", "block_groups", "FUNCTIONALS"]
