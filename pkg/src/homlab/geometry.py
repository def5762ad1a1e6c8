"""Torus geometry: distances to the origin cell, discrete balls, ball averages."""

from functools import lru_cache

import numpy as np


def signed_coords(shape):
    """Per-axis signed cell coordinates in ``[-L/2, L/2)``, origin at index 0."""
    out = []
    for axis, n in enumerate(shape):
        c = np.arange(n)
        c = np.where(c >= (n + 1) // 2, c - n, c)
        view = [1] * len(shape)
        view[axis] = n
        out.append(np.broadcast_to(c.reshape(view), shape))
    return out


@lru_cache(maxsize=32)
def _distance(shape):
    coords = signed_coords(shape)
    d = np.sqrt(sum(c.astype(np.float64) ** 2 for c in coords))
    d.setflags(write=False)
    return d


def origin_distance(shape):
    """Euclidean torus distance (cell units) of every cell centre to the origin cell."""
    return _distance(tuple(shape))


def ball_mask(shape, rho):
    """Cells whose centres lie within distance ``rho`` (cell units) of the origin."""
    return origin_distance(shape) <= rho + 1e-9


class RadialIndex:
    """Cells sorted by distance to the origin; ``count(rho)`` is ``|B_rho|``.

    Ball averages over every radius reduce to prefix sums along ``order``.
    """

    def __init__(self, shape):
        self.shape = tuple(shape)
        dist = origin_distance(self.shape).ravel()
        self.order = np.argsort(dist, kind="stable")
        self.sorted_dist = dist[self.order]

    def count(self, rho):
        return np.searchsorted(self.sorted_dist, np.asarray(rho, dtype=float) + 1e-9, side="right")

    def prefix_mean(self, values, radii):
        """Mean of ``values`` (cell field, optional trailing axes) over ``B_rho`` for each radius."""
        v = np.asarray(values)
        flat = v.reshape((-1,) + v.shape[len(self.shape):])[self.order]
        csum = np.cumsum(flat, axis=0)
        n = self.count(radii)
        return csum[n - 1] / n.reshape((-1,) + (1,) * (flat.ndim - 1))

    def ball(self, rho):
        """Flat indices of the cells in ``B_rho``."""
        return self.order[: int(self.count(rho))]


def ball_kernel(shape, radius):
    """Unit-mass indicator kernel of ``B_radius`` centred at the origin cell."""
    k = ball_mask(shape, radius).astype(np.float64)
    return k / k.sum()


def ball_average(values, radius, axes=None):
    """Periodic convolution of a cell field with the normalised ball kernel.

    ``axes`` selects the lattice axes (default: the trailing ``values.ndim`` axes
    when the array is a plain lattice field).
    """
    values = np.asarray(values, dtype=np.float64)
    if axes is None:
        axes = tuple(range(values.ndim))
    shape = tuple(values.shape[a] for a in axes)
    kernel_hat = np.fft.rfftn(ball_kernel(shape, radius))
    spec = np.fft.rfftn(values, axes=axes)
    bshape = [1] * values.ndim
    for a, n in zip(axes, kernel_hat.shape):
        bshape[a] = n
    return np.fft.irfftn(spec * kernel_hat.reshape(bshape), s=shape, axes=axes)
