import math

import numpy as np

from .core import Grid, SampleSet
from .errors import RejectedInputError
from .fusion_utils import make_dataframe, save_csv_to_datastore

# Below this a density value counts as numerical underflow, not support
SUPPORT_THRESHOLD = 1e-300


def _sorted_values(a: SampleSet, name: str):
    if a.n == 0:
        raise RejectedInputError("Sample set {} is empty!".format(name))
    return np.sort(a.values_1d())


def wasserstein1_1d(a: SampleSet, b: SampleSet) -> float:
    """
    Exact 1-Wasserstein distance between two 1-D empirical distributions,
    the integral over u in (0, 1) of |F_a^-1(u) - F_b^-1(u)|

    Parameters
    ----------
    a : SampleSet
        first sample, dim 1.
    b : SampleSet
        second sample, dim 1.

    Returns
    -------
    float

    """
    x = _sorted_values(a, "a")
    y = _sorted_values(b, "b")
    if len(x) == len(y):
        return float(np.mean(np.abs(x - y)))

    # Both quantile functions are constant between the merged breakpoints
    levels = np.union1d(np.arange(1, len(x) + 1) / len(x), np.arange(1, len(y) + 1) / len(y))
    levels = np.concatenate([[0.0], levels[levels < 1.0], [1.0]])
    mid = 0.5 * (levels[:-1] + levels[1:])
    qx = x[np.minimum((mid * len(x)).astype(int), len(x) - 1)]
    qy = y[np.minimum((mid * len(y)).astype(int), len(y) - 1)]
    return float(np.sum(np.diff(levels) * np.abs(qx - qy)))


def _grid_values(p, q, g: Grid):
    if g is None:
        g = getattr(p, "grid", None)
    if g is None:
        raise RejectedInputError("Grid divergences need a grid!")
    p = getattr(p, "values", p)
    q = getattr(q, "values", q)
    p = np.asarray(p, dtype=float).reshape(-1)
    q = np.asarray(q, dtype=float).reshape(-1)
    if p.shape != q.shape or len(p) != int(np.prod(g.shape)):
        raise RejectedInputError("Densities must share the grid of shape {}".format(g.shape))
    return p, q, g


def kl_grid(p, q, g: Grid = None) -> float:
    """
    KL(p || q) by trapezoidal quadrature of p log(p / q), 0 log 0 = 0

    Parameters
    ----------
    p, q : GridDensity or array-like
        density values on the same grid.
    g : Grid, optional
        the grid, taken from p when p is a GridDensity.

    Returns
    -------
    float
        math.inf when q vanishes where p exceeds SUPPORT_THRESHOLD.

    """
    p, q, g = _grid_values(p, q, g)
    support = p > SUPPORT_THRESHOLD
    if np.any(q[support] <= 0):
        return math.inf
    integrand = np.zeros_like(p)
    integrand[support] = p[support] * (np.log(p[support]) - np.log(q[support]))
    return g.integrate(integrand)


def tv_grid(p, q, g: Grid = None) -> float:
    p, q, g = _grid_values(p, q, g)
    return 0.5 * g.integrate(np.abs(p - q))


def histogram(a: SampleSet, bins: int = 100, range=None):
    """
    Fixed-width histogram of 1-D samples

    Parameters
    ----------
    a : SampleSet
        samples, dim 1.
    bins : int, optional
        bin count. The default is 100.
    range : tuple, optional
        (lo, hi), the sample range by default.

    Returns
    -------
    np.ndarray, np.ndarray
        counts and bin edges.

    """
    if int(bins) != bins or bins < 1:
        raise RejectedInputError("bins must be a positive integer, got {}".format(bins))
    return np.histogram(a.values_1d(), bins=int(bins), range=range)


def histogram_dataframe(a: SampleSet, bins: int = 100, range=None):
    counts, edges = histogram(a, bins, range)
    return make_dataframe({
        "bin_lo": edges[:-1],
        "bin_hi": edges[1:],
        "count": counts,
    })


def save_histogram(filename: str, a: SampleSet, bins: int = 100, range=None, out_dir: str = None):
    return save_csv_to_datastore(filename, histogram_dataframe(a, bins, range), out_dir)
