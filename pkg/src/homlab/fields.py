"""Random symmetric coefficient fields on a periodic lattice.

A field stores, for every cell, the upper triangle of a symmetric d x d matrix
(``d(d+1)/2`` numbers, row-major upper-triangular order).  Symmetry therefore
holds by construction.  Ensemble models draw cell or block values from
counter-based streams keyed by ``(seed, block index)``.
"""

from dataclasses import dataclass, field as dc_field
import math

import numpy as np

from . import rng
from .geometry import signed_coords

KINDS = (
    "ConstantIdentity",
    "Laminate",
    "IndependentBlockLogNormal",
    "HeavyTailedBlock",
    "SmoothLogNormal",
    "TwoPhaseBlock",
)

BLOCK_KINDS = ("IndependentBlockLogNormal", "HeavyTailedBlock", "TwoPhaseBlock")


def triu_pairs(d):
    """(i, j) index pairs of the stored upper triangle, in storage order."""
    return [(i, j) for i in range(d) for j in range(i, d)]


@dataclass(frozen=True)
class GridSpec:
    d: int
    L: int
    h: float = 1.0
    # small dense-oracle lattices (e.g. 6 x 6) opt out of the power-of-two rule
    require_pow2: bool = dc_field(default=True, compare=False)

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.d}")
        if self.L < 4 or (self.require_pow2 and self.L & (self.L - 1)):
            raise ValueError(f"L must be a power of two >= 4, got {self.L}")
        if not self.h > 0:
            raise ValueError(f"cell width must be positive, got {self.h}")

    @property
    def shape(self):
        return (self.L,) * self.d

    @property
    def n_cells(self):
        return self.L**self.d

    @property
    def n_entries(self):
        return self.d * (self.d + 1) // 2


@dataclass
class CoefficientField:
    grid: GridSpec
    entries: np.ndarray
    model_id: str = "custom"
    seed: int = 0

    def __post_init__(self):
        self.entries = np.ascontiguousarray(self.entries, dtype=np.float64)
        expected = self.grid.shape + (self.grid.n_entries,)
        if self.entries.shape != expected:
            raise ValueError(f"entries have shape {self.entries.shape}, expected {expected}")
        if not np.all(np.isfinite(self.entries)):
            bad = np.argwhere(~np.isfinite(self.entries))[0]
            raise ValueError(f"non-finite coefficient entry at cell {tuple(bad[:-1])}")

    @classmethod
    def from_matrices(cls, grid, mats, model_id="custom", seed=0):
        mats = np.asarray(mats, dtype=np.float64)
        if mats.shape != grid.shape + (grid.d, grid.d):
            raise ValueError(f"matrices have shape {mats.shape}")
        if not np.allclose(mats, np.swapaxes(mats, -1, -2), rtol=0, atol=1e-14 * max(1.0, np.abs(mats).max())):
            raise ValueError("coefficient matrices must be symmetric")
        ent = np.stack([mats[..., i, j] for i, j in triu_pairs(grid.d)], axis=-1)
        return cls(grid, ent, model_id, seed)

    @classmethod
    def from_scalar(cls, grid, c, model_id="custom", seed=0):
        c = np.broadcast_to(np.asarray(c, dtype=np.float64), grid.shape)
        ent = np.zeros(grid.shape + (grid.n_entries,))
        for n, (i, j) in enumerate(triu_pairs(grid.d)):
            if i == j:
                ent[..., n] = c
        return cls(grid, ent, model_id, seed)

    def component(self, i, j):
        i, j = min(i, j), max(i, j)
        return self.entries[..., triu_pairs(self.grid.d).index((i, j))]

    def matrices(self):
        d = self.grid.d
        out = np.empty(self.grid.shape + (d, d))
        for n, (i, j) in enumerate(triu_pairs(d)):
            out[..., i, j] = self.entries[..., n]
            out[..., j, i] = self.entries[..., n]
        return out

    def is_diagonal(self):
        return all(not np.any(self.entries[..., n]) for n, (i, j) in enumerate(triu_pairs(self.grid.d)) if i != j)

    def scaled(self, s):
        return CoefficientField(self.grid, self.entries * s, f"{self.model_id}*{s:g}", self.seed)


@dataclass(frozen=True)
class EnsembleModel:
    """Ensemble descriptor: ``kind`` plus kind-specific ``params``.

    ``p``, ``q`` are the moment exponents of ``mu`` and ``1/lambda``; ``kappa``
    and ``alpha`` are nominal spectral-gap and stretched-exponent constants
    carried as metadata.
    """

    kind: str
    params: dict = dc_field(default_factory=dict)
    p: float = 4.0
    q: float = 4.0
    kappa: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if not (self.p > 1 and self.q > 1 and math.isfinite(self.p) and math.isfinite(self.q)):
            raise ValueError("moment exponents p, q must lie in (1, inf)")
        if not 0 < self.kappa <= 1:
            raise ValueError("kappa must lie in (0, 1]")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        getattr(self, "_check_" + self.kind)(dict(self.params))

    # parameter validation per kind
    def _check_ConstantIdentity(self, prm):
        pass

    def _check_Laminate(self, prm):
        vals = prm.get("values")
        if not vals or any(not (v > 0 and math.isfinite(v)) for v in vals):
            raise ValueError("laminate values must be positive and finite")

    def _check_block(self, prm):
        if int(prm.get("block_side", 0)) < 1:
            raise ValueError("block_side must be a positive integer")

    def _check_IndependentBlockLogNormal(self, prm):
        self._check_block(prm)
        if not prm.get("log_variance", -1) >= 0:
            raise ValueError("log_variance must be non-negative")

    def _check_HeavyTailedBlock(self, prm):
        self._check_block(prm)
        if not (prm.get("tail_index_mu", 0) > 0 and prm.get("tail_index_lambda", 0) > 0):
            raise ValueError("tail indices must be positive")
        if not prm.get("truncation", 0) > 1:
            raise ValueError("truncation level must exceed 1")

    def _check_SmoothLogNormal(self, prm):
        if not prm.get("correlation_length", 0) > 0:
            raise ValueError("correlation_length must be positive")
        if not prm.get("log_variance", -1) >= 0:
            raise ValueError("log_variance must be non-negative")

    def _check_TwoPhaseBlock(self, prm):
        self._check_block(prm)
        lo, hi = prm.get("low", 0), prm.get("high", 0)
        if not (lo > 0 and hi > 0):
            raise ValueError("phase values must be positive")
        if not 0 <= prm.get("fraction", 0.5) <= 1:
            raise ValueError("fraction must lie in [0, 1]")

    @property
    def model_id(self):
        args = ",".join(f"{k}={_fmt(v)}" for k, v in sorted(self.params.items()))
        return f"{self.kind}({args})"

    @property
    def is_block_model(self):
        return self.kind in BLOCK_KINDS

    @property
    def block_side(self):
        return int(self.params["block_side"]) if self.is_block_model else 1

    # convenience constructors
    @classmethod
    def identity(cls, **meta):
        return cls("ConstantIdentity", {}, **meta)

    @classmethod
    def laminate(cls, values=(1.0, 4.0), period=None, random_phase=False, **meta):
        prm = {"values": tuple(float(v) for v in values), "random_phase": bool(random_phase)}
        if period is not None:
            prm["period"] = int(period)
        return cls("Laminate", prm, **meta)

    @classmethod
    def block_lognormal(cls, block_side=1, log_variance=1.0, **meta):
        return cls("IndependentBlockLogNormal", {"block_side": int(block_side), "log_variance": float(log_variance)}, **meta)

    @classmethod
    def heavy_tailed(cls, block_side=1, tail_index_mu=6.0, tail_index_lambda=6.0, truncation=1e3, **meta):
        prm = {
            "block_side": int(block_side),
            "tail_index_mu": float(tail_index_mu),
            "tail_index_lambda": float(tail_index_lambda),
            "truncation": float(truncation),
        }
        return cls("HeavyTailedBlock", prm, **meta)

    @classmethod
    def smooth_lognormal(cls, correlation_length=4.0, log_variance=1.0, **meta):
        return cls("SmoothLogNormal", {"correlation_length": float(correlation_length), "log_variance": float(log_variance)}, **meta)

    @classmethod
    def two_phase(cls, block_side=1, low=1.0, high=4.0, fraction=0.5, **meta):
        prm = {"block_side": int(block_side), "low": float(low), "high": float(high), "fraction": float(fraction)}
        return cls("TwoPhaseBlock", prm, **meta)


def _fmt(v):
    if isinstance(v, tuple):
        return "(" + ";".join(_fmt(x) for x in v) + ")"
    if isinstance(v, float):
        return f"{v:g}"
    return str(v)


# ---------------------------------------------------------------------------
# sampling


def block_grid_shape(model, grid):
    s = model.block_side
    if grid.L % s:
        raise ValueError(f"block_side {s} does not divide L={grid.L}")
    return (grid.L // s,) * grid.d


def block_values(model, block_index, seed):
    """Scalar conductances of the given blocks; block models only."""
    prm = model.params
    idx = np.asarray(block_index, dtype=np.uint64)
    if model.kind == "IndependentBlockLogNormal":
        return np.exp(math.sqrt(prm["log_variance"]) * rng.normal(seed, idx))
    if model.kind == "HeavyTailedBlock":
        upper = rng.uniform(seed, idx, 0) < 0.5
        u = rng.uniform(seed, idx, 1)
        T = prm["truncation"]
        a = np.where(upper, prm["tail_index_mu"], prm["tail_index_lambda"])
        # truncated Pareto on [1, T] by inversion
        v = (1.0 - u * (1.0 - T ** (-a))) ** (-1.0 / a)
        return np.where(upper, v, 1.0 / v)
    if model.kind == "TwoPhaseBlock":
        hit = rng.uniform(seed, idx) < prm.get("fraction", 0.5)
        return np.where(hit, prm["high"], prm["low"])
    raise ValueError(f"{model.kind} is not a block model")


def expand_blocks(values, block_side, d):
    out = values
    for axis in range(d):
        out = np.repeat(out, block_side, axis=axis)
    return out


def block_labels(model, grid):
    """Linear block index of every cell."""
    bshape = block_grid_shape(model, grid)
    lin = np.arange(int(np.prod(bshape))).reshape(bshape)
    return expand_blocks(lin, model.block_side, grid.d)


def sample_field(model, grid, seed):
    """Draw one realization; a deterministic function of ``(model, grid, seed)``."""
    seed = int(seed) & ((1 << 64) - 1)
    kind = model.kind
    prm = model.params
    if kind == "ConstantIdentity":
        c = np.ones(grid.shape)
    elif kind == "Laminate":
        vals = np.asarray(prm["values"], dtype=float)
        period = int(prm.get("period", grid.L))
        if grid.L % period:
            raise ValueError(f"laminate period {period} does not divide L={grid.L}")
        if period % len(vals):
            raise ValueError("laminate period must be a multiple of the number of values")
        shift = int(rng.uniform(seed, 0, 7) * period) if prm.get("random_phase") else 0
        x0 = (np.arange(grid.L) + shift) % period
        profile = vals[(x0 * len(vals)) // period]
        c = np.broadcast_to(profile.reshape((-1,) + (1,) * (grid.d - 1)), grid.shape)
    elif kind in BLOCK_KINDS:
        bshape = block_grid_shape(model, grid)
        vals = block_values(model, np.arange(int(np.prod(bshape))), seed).reshape(bshape)
        c = expand_blocks(vals, model.block_side, grid.d)
    elif kind == "SmoothLogNormal":
        c = np.exp(math.sqrt(prm["log_variance"]) * _smooth_gaussian(grid, prm["correlation_length"], seed))
    else:  # pragma: no cover - guarded by EnsembleModel
        raise ValueError(kind)
    return CoefficientField.from_scalar(grid, c, model.model_id, seed)


def _smooth_gaussian(grid, ell, seed):
    """Unit-variance periodic Gaussian field with Gaussian covariance of length ``ell`` cells."""
    white = rng.normal(seed, np.arange(grid.n_cells)).reshape(grid.shape)
    k2 = sum(c.astype(float) ** 2 for c in signed_coords(grid.shape)) * (2 * np.pi / grid.L) ** 2
    spec = np.exp(-0.25 * k2 * ell**2)
    spec /= math.sqrt(np.mean(spec**2))
    return np.fft.ifftn(np.fft.fftn(white) * spec).real


def resample_blocks(fld, model, blocks, seed):
    """Copy of ``fld`` with the listed blocks redrawn from ``seed``; all other blocks untouched."""
    blocks = np.atleast_1d(np.asarray(blocks, dtype=np.int64))
    labels = block_labels(model, fld.grid)
    new = block_values(model, blocks.astype(np.uint64), seed)
    ent = fld.entries.copy()
    diag = [n for n, (i, j) in enumerate(triu_pairs(fld.grid.d)) if i == j]
    for b, v in zip(blocks, new):
        mask = labels == b
        for n in diag:
            ent[mask, n] = v
    return CoefficientField(fld.grid, ent, fld.model_id, fld.seed)


# ---------------------------------------------------------------------------
# pointwise ellipticity and moment constants


def mu_lambda(fld):
    """Largest (``mu``) and smallest (``lambda``) eigenvalue of every cell matrix."""
    d = fld.grid.d
    if fld.is_diagonal():
        diag = np.stack([fld.component(i, i) for i in range(d)], axis=-1)
        mu, lam = diag.max(axis=-1), diag.min(axis=-1)
    else:
        try:
            ev = np.linalg.eigvalsh(fld.matrices())
        except np.linalg.LinAlgError as exc:  # pragma: no cover
            raise ValueError(f"eigen-solve failed: {exc}") from exc
        lam, mu = ev[..., 0], ev[..., -1]
    if not np.all(lam > 0):
        bad = tuple(int(i) for i in np.argwhere(~(lam > 0))[0])
        raise ValueError(f"cell {bad} is not positive definite (lambda={lam[bad]:.3g})")
    return mu, lam


def empirical_K(fields, p, q):
    """``(mean mu^p)^(1/p) + (mean lambda^-q)^(1/q)`` pooled over all cells of all samples.

    ``fields`` may be any iterable, so samples can be streamed.
    """
    if not (p > 1 and q > 1):
        raise ValueError("p and q must exceed 1")
    sp = sq = 0.0
    n = 0
    model_id = None
    for f in fields:
        mu, lam = mu_lambda(f)
        sp += float(np.sum(mu**p))
        sq += float(np.sum(lam ** (-q)))
        n += mu.size
        model_id = f.model_id
    if n == 0:
        raise ValueError("need at least one field")
    K = (sp / n) ** (1 / p) + (sq / n) ** (1 / q)
    if not math.isfinite(K):
        raise ValueError(f"non-finite moment accumulation for model {model_id}")
    return K


def check_moment_condition(p, q, d, strict=True):
    s = 1.0 / p + 1.0 / q
    return s < 2.0 / d if strict else s <= 2.0 / d


# ---------------------------------------------------------------------------
# coarsening partitions


@dataclass
class Partition:
    beta: float
    blocks: list
    diam: np.ndarray
    dist: np.ndarray
    C_d: float
    labels: np.ndarray

    def __len__(self):
        return len(self.blocks)

    def check(self, rtol=1e-12):
        """Both sides of ``diam <= (dist+1)^beta <= C_d diam`` for every block."""
        mid = (self.dist + 1.0) ** self.beta
        return bool(np.all(self.diam <= mid * (1 + rtol)) and np.all(mid <= self.C_d * self.diam * (1 + rtol)))


def build_partition(grid, beta):
    """Dyadic-annulus coarsening of the torus around the origin cell.

    Distances and diameters use the max-norm in cell units, so a single cell has
    diameter 1.  Shell ``k`` holds cells at distance ``[2^k - 1, 2^(k+1) - 1)``
    and is tiled by cubes of side ``floor(2^(k beta))``.
    """
    if not 0 <= beta < 1:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")
    coords = signed_coords(grid.shape)
    cheb = np.max(np.abs(np.stack(coords)), axis=0)
    shell = np.floor(np.log2(cheb + 1.0) + 1e-12).astype(np.int64)
    side = np.floor((2.0 ** shell) ** beta + 1e-9).astype(np.int64)
    key = [shell]
    for c in coords:
        key.append(np.floor_divide(c, side))
    key = np.stack([k.ravel() for k in key], axis=1)
    _, labels = np.unique(key, axis=0, return_inverse=True)
    labels = labels.reshape(grid.shape)
    order = np.argsort(labels.ravel(), kind="stable")
    counts = np.bincount(labels.ravel())
    blocks = np.split(order, np.cumsum(counts)[:-1])
    flat_coords = np.stack([c.ravel() for c in coords], axis=1)
    flat_cheb = cheb.ravel()
    diam = np.empty(len(blocks))
    dist = np.empty(len(blocks))
    for b, cells in enumerate(blocks):
        cc = flat_coords[cells]
        diam[b] = float(np.max(cc.max(axis=0) - cc.min(axis=0)) + 1)
        dist[b] = float(flat_cheb[cells].min())
    C_d = float(np.max((dist + 1.0) ** beta / diam))
    return Partition(beta, blocks, diam, dist, C_d, labels)
