import logging

from dataclasses import dataclass, field

import numpy as np

from ..core import GaussianMixture, Grid, OuSchedule, SampleSet, SimplexWeights
from ..diffusion.ou_process import analytic_score
from ..diffusion.sampler import fused_score
from ..errors import FlaggedSampleError, FrankWolfeAbortedError, RejectedInputError
from ..fusion_utils import make_dataframe, save_csv_to_datastore
from .barycenter import (
    _barycenter_from_log_p, as_log_density, reference_log_densities_on_grid
)


@dataclass
class FrankWolfeTrace:
    iterates: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    gap: list = field(default_factory=list)
    gammas: list = field(default_factory=list)

    @property
    def final(self) -> SimplexWeights:
        return self.iterates[-1]

    def to_dataframe(self):
        n = len(self.iterates)
        return make_dataframe({
            "tau": np.arange(1, n + 1),
            "F": np.asarray(self.objective[:n]),
            "gap": np.asarray(self.gap[:n] + [np.nan] * (n - len(self.gap))),
        })

    def to_csv(self, filename: str, out_dir: str = None):
        return save_csv_to_datastore(filename, self.to_dataframe(), out_dir)


class VanillaFusionObjective:
    """
    KL objective F(lambda) = -mean_x sum_i lambda_i log p_i(x) + log Z(lambda)
    with the reference log densities cached at the target samples and on the
    quadrature grid. The lambda-independent target entropy term is dropped.

    Parameters
    ----------
    target : SampleSet
        samples of the target distribution.
    refs : sequence of GaussianMixture or log-density callables
        reference densities.
    g : Grid
        quadrature grid, dim <= 2.

    """

    def __init__(self, target: SampleSet, refs, g: Grid):
        refs = list(refs)
        if target.n == 0:
            raise RejectedInputError("Vanilla fusion needs target samples!")
        if target.dim != g.dim:
            raise RejectedInputError(
                "Target dim {} does not match grid dim {}".format(target.dim, g.dim)
            )
        self.grid = g
        self.k = len(refs)

        target_log_p = np.stack([as_log_density(r)(target.rows) for r in refs], axis=1)
        flagged = np.flatnonzero(~np.all(np.isfinite(target_log_p), axis=1))
        if len(flagged):
            raise FlaggedSampleError(flagged)

        self.target_mean_log_p = target_log_p.mean(axis=0)
        self.grid_log_p = reference_log_densities_on_grid(refs, g)

    def _check(self, w: SimplexWeights):
        if w.k != self.k:
            raise RejectedInputError("Got {} weights for {} references".format(w.k, self.k))

    def barycenter(self, w: SimplexWeights):
        self._check(w)
        return _barycenter_from_log_p(self.grid_log_p, w, self.grid)

    def objective(self, w: SimplexWeights) -> float:
        return float(-w.lam @ self.target_mean_log_p + self.barycenter(w).log_Z)

    def gradient(self, w: SimplexWeights):
        """
        dF/dlambda_i = -E_target[log p_i] + E_barycenter[log p_i]
        """
        density = self.barycenter(w)
        weighted = density.values * self.grid.trapezoid_weights().reshape(-1)
        return -self.target_mean_log_p + self.grid_log_p @ weighted


def vf_objective(w: SimplexWeights, target: SampleSet, refs, g: Grid) -> float:
    return VanillaFusionObjective(target, refs, g).objective(w)


def vf_gradient(w: SimplexWeights, target: SampleSet, refs, g: Grid):
    return VanillaFusionObjective(target, refs, g).gradient(w)


def frank_wolfe(objective, gradient, w0: SimplexWeights, tau_max: int) -> FrankWolfeTrace:
    """
    Frank-Wolfe over the simplex with the function-agnostic step rule
    gamma_1 = 1, gamma_tau = 2 / (tau + 3) for tau > 1

    Parameters
    ----------
    objective : callable
        SimplexWeights -> float.
    gradient : callable
        SimplexWeights -> k-vector.
    w0 : SimplexWeights
        starting point x_1.
    tau_max : int
        number of iterations, at least 1.

    Returns
    -------
    FrankWolfeTrace
        tau_max + 1 iterates with their objective values and the duality gap
        proxy <grad F(x_tau), x_tau - v_tau>.

    """
    if int(tau_max) != tau_max or tau_max < 1:
        raise RejectedInputError("tau_max must be a positive integer, got {}".format(tau_max))
    log = logging.getLogger(__name__)

    trace = FrankWolfeTrace()
    x = w0
    for tau in range(1, int(tau_max) + 2):
        grad = np.asarray(gradient(x), dtype=float)
        trace.iterates.append(x)
        trace.objective.append(float(objective(x)))
        if not np.all(np.isfinite(grad)):
            raise FrankWolfeAbortedError(
                "Non-finite gradient at iteration {}".format(tau), trace
            )

        # argmin returns the lowest index on ties
        vertex = int(np.argmin(grad))
        v = np.zeros(x.k)
        v[vertex] = 1.0
        trace.gap.append(float(grad @ (x.lam - v)))
        if tau > tau_max:
            break

        gamma = 1.0 if tau == 1 else 2.0 / (tau + 3.0)
        trace.gammas.append(gamma)
        if gamma == 1.0:
            x = SimplexWeights(v)
        else:
            x = SimplexWeights.from_clipped(x.lam + gamma * (v - x.lam))
        log.debug("FW tau={} F={:.6g} gap={:.3g}".format(tau, trace.objective[-1], trace.gap[-1]))

    return trace


@dataclass
class VanillaFusionResult:
    weights: SimplexWeights
    trace: FrankWolfeTrace
    fused_field: object = None


def run_vanilla_fusion(
    target: SampleSet, refs, schedule: OuSchedule, g: Grid = None,
    tau_max: int = 500, w0: SimplexWeights = None
) -> VanillaFusionResult:
    """
    Learn fusion weights by minimizing the distribution-level KL objective
    with Frank-Wolfe, using the exact reference mixture densities

    Parameters
    ----------
    target : SampleSet
        target samples.
    refs : sequence of GaussianMixture
        reference mixtures.
    schedule : OuSchedule
        forward process used to build the fused sampling field.
    g : Grid, optional
        quadrature grid, covers the references by default.
    tau_max : int, optional
        Frank-Wolfe iterations. The default is 500.
    w0 : SimplexWeights, optional
        starting point, uniform by default.

    Returns
    -------
    VanillaFusionResult
        weights, trace and the fused score field for reverse sampling.

    """
    refs = list(refs)
    if not all(isinstance(r, GaussianMixture) for r in refs):
        raise RejectedInputError("Vanilla fusion needs GaussianMixture references (exact densities)")
    if g is None:
        g = Grid.covering(refs, n_points=4096 if refs[0].dim == 1 else 256)
    if w0 is None:
        w0 = SimplexWeights.uniform(len(refs))

    problem = VanillaFusionObjective(target, refs, g)
    trace = frank_wolfe(problem.objective, problem.gradient, w0, tau_max)
    weights = trace.final

    logging.getLogger(__name__).info(
        "Vanilla fusion weights {} after {} iterations (F = {:.6g})".format(
            np.round(weights.lam, 4).tolist(), tau_max, trace.objective[-1]
        )
    )
    return VanillaFusionResult(
        weights=weights,
        trace=trace,
        fused_field=fused_score([analytic_score(r, schedule) for r in refs], weights),
    )
