import logging
import math

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from scipy.special import logsumexp, softmax

from .errors import RejectedInputError
from .fusion_utils import as_stream, make_dataframe, save_csv_to_datastore

WEIGHT_TOLERANCE = 1e-12
SIMPLEX_TOLERANCE = 1e-10
LOG_2PI = math.log(2.0 * math.pi)


def _frozen_array(values, dtype=float):
    array = np.array(values, dtype=dtype)
    array.setflags(write=False)
    return array


def _as_points(x, dim: int):
    """
    Coerce x into an (n, dim) array, remembering whether a single point was
    passed so the caller can squeeze the result back
    """
    points = np.asarray(x, dtype=float)
    single = points.ndim <= 1
    if points.ndim == 0:
        points = points.reshape(1, 1)
    elif points.ndim == 1:
        points = points.reshape(1, -1)
    if points.ndim != 2 or points.shape[1] != dim:
        raise RejectedInputError(
            "Expected points of dimension {}, got array of shape {}".format(
                dim, np.shape(x)
            )
        )
    return points, single


class GaussianMixture:
    """
    Weighted diagonal-covariance Gaussian mixture. Immutable after
    construction; arrays are read-only.

    Parameters
    ----------
    weights : array-like, shape (k,)
        component probabilities, summing to 1 within 1e-12.
    means : array-like, shape (k, dim)
        component means.
    variances : array-like, shape (k, dim)
        diagonal variances, strictly positive.

    """

    def __init__(self, weights, means, variances):
        weights = np.atleast_1d(np.asarray(weights, dtype=float))
        means = np.asarray(means, dtype=float)
        variances = np.asarray(variances, dtype=float)

        if means.ndim == 1:
            means = means.reshape(-1, 1)
        if variances.ndim == 1:
            variances = variances.reshape(-1, 1)

        if weights.ndim != 1 or len(weights) == 0:
            raise RejectedInputError("Mixture needs at least one component!")
        if means.shape[0] != len(weights) or variances.shape != means.shape:
            raise RejectedInputError(
                "Component means {} and variances {} must match {} weights".format(
                    means.shape, variances.shape, len(weights)
                )
            )
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > WEIGHT_TOLERANCE:
            raise RejectedInputError(
                "Component weights must be nonnegative and sum to 1, got {}".format(
                    weights.tolist()
                )
            )
        if not np.all(np.isfinite(means)):
            raise RejectedInputError("Component means must be finite!")
        if not np.all(np.isfinite(variances)) or np.any(variances <= 0):
            raise RejectedInputError("All variances must be strictly positive!")

        self.weights = _frozen_array(weights)
        self.means = _frozen_array(means)
        self.variances = _frozen_array(variances)

    @classmethod
    def single(cls, mean, var):
        """
        A one-component mixture, ie a diagonal Gaussian
        """
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        var = np.broadcast_to(np.asarray(var, dtype=float), mean.shape)
        return cls([1.0], mean.reshape(1, -1), var.reshape(1, -1))

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])

    @property
    def n_components(self) -> int:
        return int(len(self.weights))

    @property
    def components(self):
        return [
            {"weight": float(w), "mean": mu.tolist(), "var": v.tolist()}
            for w, mu, v in zip(self.weights, self.means, self.variances)
        ]

    def to_dict(self) -> dict:
        return {"dim": self.dim, "components": self.components}

    @classmethod
    def from_dict(cls, data: dict):
        """
        Build from the {dim, components: [{weight, mean, var}]} document

        Parameters
        ----------
        data : dict
            mixture document.

        """
        try:
            dim = int(data["dim"])
            components = data["components"]
            mixture = cls(
                [c["weight"] for c in components],
                [np.atleast_1d(c["mean"]) for c in components],
                [np.atleast_1d(c["var"]) for c in components],
            )
        except (KeyError, TypeError) as e:
            raise RejectedInputError("Malformed mixture document: {}".format(e))

        if mixture.dim != dim:
            raise RejectedInputError(
                "Mixture document declares dim {} but components have dim {}".format(
                    dim, mixture.dim
                )
            )
        return mixture

    def log_density(self, x):
        return mixture_log_density(self, x)

    def score(self, x):
        return mixture_score(self, x)

    def sample(self, n: int, rng, provenance: str = "mixture"):
        return mixture_sample(self, n, rng, provenance=provenance)

    def score_field(self, schedule):
        # Late import, ou_process depends on this module
        from .diffusion.ou_process import analytic_score
        return analytic_score(self, schedule)

    def support_bounds(self, n_std: float = 8.0):
        """
        Per-axis (lo, hi) covering every component mean +- n_std std
        """
        std = np.sqrt(self.variances)
        return (
            np.min(self.means - n_std * std, axis=0),
            np.max(self.means + n_std * std, axis=0),
        )

    def __eq__(self, other):
        if not isinstance(other, GaussianMixture):
            return NotImplemented
        return (
            np.array_equal(self.weights, other.weights)
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.variances, other.variances)
        )

    def __hash__(self):
        return hash((self.weights.tobytes(), self.means.tobytes(), self.variances.tobytes()))

    def __repr__(self):
        return "GaussianMixture(dim={}, components={})".format(self.dim, self.components)


@dataclass(frozen=True)
class OuSchedule:
    """
    Forward Ornstein-Uhlenbeck process dX = -aX dt + sigma dW on [0, T] with
    N reverse steps of size h = T/N
    """
    a: float = 1.0
    sigma: float = math.sqrt(2.0)
    horizon_T: float = 5.0
    steps_N: int = 500

    def __post_init__(self):
        if not (self.a > 0 and math.isfinite(self.a)):
            raise RejectedInputError("Drift rate a must be positive, got {}".format(self.a))
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise RejectedInputError("Diffusion scale sigma must be positive, got {}".format(self.sigma))
        if not (self.horizon_T > 0 and math.isfinite(self.horizon_T)):
            raise RejectedInputError("Horizon T must be positive, got {}".format(self.horizon_T))
        if int(self.steps_N) != self.steps_N or self.steps_N < 1:
            raise RejectedInputError("Step count N must be a positive integer, got {}".format(self.steps_N))

    @property
    def h(self) -> float:
        return self.horizon_T / self.steps_N

    @property
    def stationary_var(self) -> float:
        return self.sigma ** 2 / (2.0 * self.a)

    def with_steps(self, steps_N: int):
        return OuSchedule(self.a, self.sigma, self.horizon_T, steps_N)

    def to_dict(self) -> dict:
        return {
            "a": self.a, "sigma": self.sigma,
            "horizon_T": self.horizon_T, "steps_N": int(self.steps_N),
        }

    @classmethod
    def from_dict(cls, data: dict):
        return cls(
            a=float(data.get("a", 1.0)),
            sigma=float(data.get("sigma", math.sqrt(2.0))),
            horizon_T=float(data.get("horizon_T", data.get("T", 5.0))),
            steps_N=int(data.get("steps_N", data.get("N", 500))),
        )


@dataclass(frozen=True, eq=False)
class SimplexWeights:
    """
    Fusion weights on the probability simplex
    """
    lam: np.ndarray

    def __post_init__(self):
        lam = np.atleast_1d(np.array(self.lam, dtype=float))
        if lam.ndim != 1 or len(lam) == 0:
            raise RejectedInputError("Simplex weights must be a nonempty vector!")
        if not np.all(np.isfinite(lam)) or np.any(lam < 0) or np.any(lam > 1):
            raise RejectedInputError(
                "Simplex weights must lie in [0, 1], got {}".format(lam.tolist())
            )
        if abs(lam.sum() - 1.0) > SIMPLEX_TOLERANCE:
            raise RejectedInputError(
                "Simplex weights must sum to 1, got sum {}".format(lam.sum())
            )
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)

    @property
    def k(self) -> int:
        return int(len(self.lam))

    @classmethod
    def uniform(cls, k: int):
        return cls(np.full(k, 1.0 / k))

    @classmethod
    def vertex(cls, k: int, i: int):
        lam = np.zeros(k)
        lam[i] = 1.0
        return cls(lam)

    @classmethod
    def from_softmax(cls, theta):
        return cls(softmax(np.asarray(theta, dtype=float)))

    @classmethod
    def from_clipped(cls, lam):
        """
        Project tiny numerical violations (negative round-off, sum drift) back
        onto the simplex
        """
        lam = np.clip(np.asarray(lam, dtype=float), 0.0, None)
        return cls(lam / lam.sum())

    def vertex_index(self):
        """
        Index of the vertex if the weights are one-hot, else None
        """
        nonzero = np.flatnonzero(self.lam)
        if len(nonzero) == 1 and self.lam[nonzero[0]] == 1.0:
            return int(nonzero[0])
        return None

    def tolist(self):
        return self.lam.tolist()

    def __eq__(self, other):
        if not isinstance(other, SimplexWeights):
            return NotImplemented
        return np.array_equal(self.lam, other.lam)

    def __hash__(self):
        return hash(self.lam.tobytes())


class ScoreField(ABC):
    """
    Time-indexed vector field s(t, x). Implementations must be deterministic
    and reentrant.
    """

    @property
    @abstractmethod
    def dim(self) -> int:
        pass

    @abstractmethod
    def _evaluate_batch(self, t: np.ndarray, x: np.ndarray) -> np.ndarray:
        """
        Evaluate on a batch, t of shape (n,) and x of shape (n, dim)
        """

    def evaluate(self, t, x):
        """
        Evaluate the field

        Parameters
        ----------
        t : float or array-like, shape (n,)
            times, broadcast against the points.
        x : array-like, shape (dim,) or (n, dim)
            points.

        Returns
        -------
        np.ndarray
            shape (dim,) for a single point, (n, dim) for a batch.

        """
        points, single = _as_points(x, self.dim)
        times = np.broadcast_to(np.asarray(t, dtype=float), (points.shape[0],))
        out = self._evaluate_batch(times, points)
        return out[0] if single else out

    def descriptor(self) -> dict:
        raise NotImplementedError(
            "{} cannot be persisted".format(self.__class__.__name__)
        )


@dataclass(frozen=True, eq=False)
class SampleSet:
    """
    Rows of d-vectors with the label and seed that produced them
    """
    rows: np.ndarray
    provenance: str = ""
    seed: int = None

    def __post_init__(self):
        rows = np.array(self.rows, dtype=float)
        if rows.ndim == 1:
            rows = rows.reshape(-1, 1)
        if rows.ndim != 2:
            raise RejectedInputError("Sample rows must form a 2-D array!")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])

    @property
    def n(self) -> int:
        return int(self.rows.shape[0])

    def __len__(self):
        return self.n

    def values_1d(self):
        if self.dim != 1:
            raise RejectedInputError("Expected 1-D samples, got dim {}".format(self.dim))
        return self.rows[:, 0]

    def to_dataframe(self):
        return make_dataframe(
            {"x{}".format(j): self.rows[:, j] for j in range(self.dim)}
        )

    def to_csv(self, filename: str, out_dir: str = None):
        return save_csv_to_datastore(filename, self.to_dataframe(), out_dir)

    def __eq__(self, other):
        if not isinstance(other, SampleSet):
            return NotImplemented
        return np.array_equal(self.rows, other.rows)


@dataclass(frozen=True)
class Grid:
    """
    Uniform tensor grid in 1 or 2 dimensions, axes given as (lo, hi, n_points)
    """
    axes: tuple

    def __post_init__(self):
        axes = tuple((float(lo), float(hi), int(n)) for lo, hi, n in self.axes)
        if len(axes) not in (1, 2):
            raise RejectedInputError("Grids support dim 1 or 2, got {}".format(len(axes)))
        for lo, hi, n in axes:
            if not lo < hi:
                raise RejectedInputError("Grid axis needs lo < hi, got ({}, {})".format(lo, hi))
            if n < 2:
                raise RejectedInputError("Grid axis needs at least 2 points, got {}".format(n))
        object.__setattr__(self, "axes", axes)

    @classmethod
    def covering(cls, mixtures, n_points: int = 4096, n_std: float = 8.0):
        """
        Smallest grid covering every component mean +- n_std std of every
        mixture

        Parameters
        ----------
        mixtures : sequence of GaussianMixture
            references to cover.
        n_points : int, optional
            points per axis. The default is 4096.
        n_std : float, optional
            half width in standard deviations. The default is 8.

        """
        los, his = zip(*[m.support_bounds(n_std) for m in mixtures])
        lo = np.min(np.stack(los), axis=0)
        hi = np.max(np.stack(his), axis=0)
        return cls(tuple((lower, upper, n_points) for lower, upper in zip(lo, hi)))

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self):
        return tuple(n for _, _, n in self.axes)

    @property
    def spacing(self):
        return tuple((hi - lo) / (n - 1) for lo, hi, n in self.axes)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axis_points(self, j: int):
        lo, hi, n = self.axes[j]
        return np.linspace(lo, hi, n)

    @property
    def points(self):
        """
        All grid nodes as an (m, dim) array in C order of self.shape
        """
        mesh = np.meshgrid(*[self.axis_points(j) for j in range(self.dim)], indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def trapezoid_weights(self):
        """
        Tensor-product trapezoidal weights, shape self.shape
        """
        per_axis = []
        for (lo, hi, n), h in zip(self.axes, self.spacing):
            w = np.full(n, h)
            w[0] = w[-1] = h / 2.0
            per_axis.append(w)
        if self.dim == 1:
            return per_axis[0]
        return np.outer(per_axis[0], per_axis[1])

    def integrate(self, values):
        """
        Trapezoidal quadrature of values given on the grid nodes
        """
        values = np.asarray(values, dtype=float).reshape(self.shape)
        return float(np.sum(values * self.trapezoid_weights()))

    def log_integrate(self, log_values):
        """
        log of the trapezoidal quadrature of exp(log_values), via log-sum-exp
        """
        log_values = np.asarray(log_values, dtype=float).reshape(self.shape)
        return float(logsumexp(log_values + np.log(self.trapezoid_weights())))

    def to_dict(self) -> dict:
        return {"axes": [list(axis) for axis in self.axes]}

    @classmethod
    def from_dict(cls, data: dict):
        return cls(tuple(tuple(axis) for axis in data["axes"]))


def _component_log_densities(m: GaussianMixture, points: np.ndarray):
    """
    log w_j + log N(x; mu_j, diag v_j), shape (n, k)
    """
    diff = points[:, None, :] - m.means[None, :, :]
    quad = np.sum(diff ** 2 / m.variances[None, :, :], axis=2)
    log_norm = -0.5 * (m.dim * LOG_2PI + np.sum(np.log(m.variances), axis=1))
    with np.errstate(divide="ignore"):
        log_w = np.log(m.weights)
    return log_w[None, :] + log_norm[None, :] - 0.5 * quad


def mixture_log_density(m: GaussianMixture, x):
    """
    Log density of a mixture, evaluated with log-sum-exp

    Parameters
    ----------
    m : GaussianMixture
        the mixture.
    x : array-like, shape (dim,) or (n, dim)
        evaluation points.

    Returns
    -------
    float or np.ndarray
        scalar for a single point, shape (n,) for a batch.

    """
    points, single = _as_points(x, m.dim)
    out = logsumexp(_component_log_densities(m, points), axis=1)
    return float(out[0]) if single else out


def mixture_score(m: GaussianMixture, x):
    """
    Gradient of the mixture log density: the responsibility-weighted sum of
    component scores (mu_j - x) / v_j

    Parameters
    ----------
    m : GaussianMixture
        the mixture.
    x : array-like, shape (dim,) or (n, dim)
        evaluation points.

    Returns
    -------
    np.ndarray
        shape (dim,) or (n, dim).

    """
    points, single = _as_points(x, m.dim)
    out = _mixture_score_points(m.weights, m.means[None], m.variances[None], points)
    return out[0] if single else out


def _mixture_score_points(weights, means, variances, points):
    """
    Score of mixtures whose means/variances may vary per point.

    means, variances have shape (n or 1, k, dim); points (n, dim).
    """
    diff = points[:, None, :] - means
    log_comp = -0.5 * np.sum(np.log(variances) + diff ** 2 / variances, axis=2)
    with np.errstate(divide="ignore"):
        log_comp = log_comp + np.log(weights)[None, :]
    resp = softmax(log_comp, axis=1)
    return np.einsum("nk,nkd->nd", resp, -diff / variances)


def mixture_sample(m: GaussianMixture, n: int, rng, provenance: str = "mixture"):
    """
    Draw n i.i.d. samples: a component chosen by weight, then a Gaussian draw

    Parameters
    ----------
    m : GaussianMixture
        the mixture.
    n : int
        number of draws, at least 1.
    rng : np.random.Generator or int
        random stream, or a seed to build one from.
    provenance : str, optional
        label stored on the SampleSet.

    Returns
    -------
    SampleSet

    """
    if int(n) != n or n < 1:
        raise RejectedInputError("Sample count must be a positive integer, got {}".format(n))
    stream, seed = as_stream(rng)

    labels = stream.choice(m.n_components, size=int(n), p=m.weights)
    noise = stream.standard_normal((int(n), m.dim))
    rows = m.means[labels] + np.sqrt(m.variances[labels]) * noise

    logging.getLogger(__name__).debug("Drew {} samples from {}".format(n, provenance))
    return SampleSet(rows, provenance=provenance, seed=seed)
