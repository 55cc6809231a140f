import logging

from dataclasses import dataclass

import numpy as np

from scipy.integrate import cumulative_trapezoid
from scipy.special import logsumexp

from ..core import (
    GaussianMixture, Grid, OuSchedule, SampleSet, ScoreField, SimplexWeights,
    mixture_log_density
)
from ..diffusion.ou_process import _decay_and_var
from ..errors import InsufficientGridError, RejectedInputError
from ..fusion_utils import as_stream, make_dataframe, save_csv_to_datastore

# Largest reference mass allowed outside the grid
MAX_TAIL_MASS = 1e-4


def as_log_density(reference):
    """
    Turn a GaussianMixture or a callable into a log-density callable on
    (m, dim) point arrays
    """
    if isinstance(reference, GaussianMixture):
        return lambda points: mixture_log_density(reference, points)
    if callable(reference):
        return reference
    raise RejectedInputError(
        "References must be GaussianMixture or callables, got {}".format(type(reference))
    )


def reference_log_densities_on_grid(references, g: Grid):
    """
    Evaluate every reference on the grid and check the grid covers its mass

    Returns
    -------
    np.ndarray
        shape (k, m) of log densities at the grid nodes.

    """
    points = g.points
    log_p = np.stack([as_log_density(r)(points) for r in references])
    for i, row in enumerate(log_p):
        tail = 1.0 - float(np.exp(g.log_integrate(row)))
        if tail > MAX_TAIL_MASS:
            raise InsufficientGridError(
                "Reference {} has mass {:.3g} outside the grid {}".format(i, tail, g.axes)
            )
    return log_p


def gaussian_barycenter(components, w: SimplexWeights) -> GaussianMixture:
    """
    KL barycenter of single Gaussians: precision 1/v* = sum lambda_i / v_i
    and mean mu* = v* sum lambda_i mu_i / v_i, per coordinate

    Parameters
    ----------
    components : sequence of GaussianMixture
        single-component references sharing a dimension.
    w : SimplexWeights
        barycenter weights.

    Returns
    -------
    GaussianMixture
        single-component barycenter.

    """
    components = list(components)
    if len(components) != w.k:
        raise RejectedInputError("Got {} weights for {} Gaussians".format(w.k, len(components)))
    if any(c.n_components != 1 for c in components):
        raise RejectedInputError("gaussian_barycenter takes single-component Gaussians only!")
    if len({c.dim for c in components}) != 1:
        raise RejectedInputError("Gaussians disagree on dimension!")

    vertex = w.vertex_index()
    if vertex is not None:
        return components[vertex]

    precision = sum(lam / c.variances[0] for lam, c in zip(w.lam, components))
    var = 1.0 / precision
    mean = var * sum(lam * c.means[0] / c.variances[0] for lam, c in zip(w.lam, components))
    return GaussianMixture.single(mean, var)


class GridDensity:
    """
    Normalized density tabulated on a grid, with its log partition. Acts as a
    target distribution: it can be sampled (1-D) and diffused.
    """

    def __init__(self, grid: Grid, log_values, log_Z: float = 0.0):
        self.grid = grid
        self.log_values = np.asarray(log_values, dtype=float).reshape(-1)
        self.log_values.setflags(write=False)
        self.log_Z = float(log_Z)

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def values(self):
        return np.exp(self.log_values)

    def integral(self) -> float:
        return self.grid.integrate(self.values)

    def sample(self, n: int, rng, provenance: str = "grid_density"):
        return grid_inverse_cdf_sample(self, n, rng, provenance=provenance)

    def score_field(self, schedule: OuSchedule):
        return GridDensityScoreField(self, schedule)

    def to_dataframe(self):
        points = self.grid.points
        columns = {"x{}".format(j): points[:, j] for j in range(self.dim)}
        columns["value"] = self.values
        return make_dataframe(columns)

    def to_csv(self, filename: str, out_dir: str = None):
        return save_csv_to_datastore(filename, self.to_dataframe(), out_dir)


class GridDensityScoreField(ScoreField):
    """
    Time-t score of a grid density under the forward process, computed by
    quadrature of the Gaussian transition kernel over the grid nodes
    """

    # Grid nodes per evaluation chunk, bounds the (chunk, m) work array
    CHUNK = 512

    def __init__(self, density: GridDensity, schedule: OuSchedule):
        self.density = density
        self.schedule = schedule
        self._nodes = density.grid.points
        self._log_mass = density.log_values + np.log(density.grid.trapezoid_weights().reshape(-1))

    @property
    def dim(self) -> int:
        return self.density.dim

    def _evaluate_batch(self, t, x):
        decay, var_t = _decay_and_var(self.schedule, t)
        if np.any(var_t <= 0):
            raise RejectedInputError("Grid density scores need t > 0")

        out = np.empty_like(x)
        for start in range(0, x.shape[0], self.CHUNK):
            stop = start + self.CHUNK
            xc = x[start:stop]
            dc = decay[start:stop, None, None]
            vc = var_t[start:stop, None, None]
            diff = dc * self._nodes[None] - xc[:, None, :]
            log_kernel = -0.5 * np.sum(diff ** 2, axis=2) / vc[:, :, 0]
            log_post = self._log_mass[None] + log_kernel
            log_post -= logsumexp(log_post, axis=1, keepdims=True)
            out[start:stop] = np.einsum("nm,nmd->nd", np.exp(log_post), diff) / vc[:, 0, :]
        return out


def barycenter_density_grid(log_densities, w: SimplexWeights, g: Grid) -> GridDensity:
    """
    Normalized geometric mixture prod p_i^lambda_i / Z on a grid

    Parameters
    ----------
    log_densities : sequence of callables or GaussianMixture
        reference log densities on (m, dim) arrays.
    w : SimplexWeights
        barycenter weights.
    g : Grid
        quadrature grid, dim <= 2, covering every reference.

    Returns
    -------
    GridDensity
        log values normalized by log_Z, and log_Z itself.

    """
    log_densities = list(log_densities)
    if len(log_densities) != w.k:
        raise RejectedInputError("Got {} weights for {} references".format(w.k, len(log_densities)))
    log_p = reference_log_densities_on_grid(log_densities, g)
    return _barycenter_from_log_p(log_p, w, g)


def _barycenter_from_log_p(log_p, w: SimplexWeights, g: Grid) -> GridDensity:
    active = w.lam > 0
    log_unnorm = w.lam[active] @ log_p[active]
    log_Z = g.log_integrate(log_unnorm)
    return GridDensity(g, log_unnorm - log_Z, log_Z)


def barycenter_log_partition(log_densities, w: SimplexWeights, g: Grid) -> float:
    """
    log of the integral of prod p_i^lambda_i over the grid
    """
    return barycenter_density_grid(log_densities, w, g).log_Z


def grid_inverse_cdf_sample(density: GridDensity, n: int, rng, provenance: str = "grid_density"):
    """
    Inverse-CDF draws from a 1-D grid density, CDF by trapezoidal
    accumulation and linear interpolation between nodes

    Parameters
    ----------
    density : GridDensity
        1-D normalized density.
    n : int
        number of draws.
    rng : np.random.Generator or int
        random stream.

    Returns
    -------
    SampleSet

    """
    if density.dim != 1:
        raise RejectedInputError("Inverse-CDF sampling is 1-D only, got dim {}".format(density.dim))
    if int(n) != n or n < 1:
        raise RejectedInputError("Sample count must be a positive integer, got {}".format(n))
    stream, seed = as_stream(rng)

    x = density.grid.axis_points(0)
    cdf = cumulative_trapezoid(density.values, x, initial=0.0)
    cdf /= cdf[-1]
    u = stream.uniform(size=int(n))
    rows = np.interp(u, cdf, x)

    logging.getLogger(__name__).debug("Drew {} inverse-CDF samples".format(n))
    return SampleSet(rows.reshape(-1, 1), provenance=provenance, seed=seed)
