from dataclasses import dataclass

import numpy as np

from ..core import (
    GaussianMixture, OuSchedule, ScoreField, _mixture_score_points
)
from ..errors import RejectedInputError, SingularTimeError
from ..fusion_utils import as_stream


@dataclass(frozen=True)
class TransitionParams:
    """
    Gaussian transition kernel X(t) | X(0) = x0 ~ N(decay * x0, var_t * I)
    """
    decay: float
    var_t: float


def _decay_and_var(s: OuSchedule, t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise RejectedInputError("Diffusion time must be nonnegative, got {}".format(np.min(t)))
    decay = np.exp(-s.a * t)
    var_t = s.stationary_var * -np.expm1(-2.0 * s.a * t)
    return decay, var_t


def transition_params(s: OuSchedule, t: float) -> TransitionParams:
    """
    Decay e^{-at} and variance (sigma^2 / 2a)(1 - e^{-2at}) of the forward
    kernel at time t

    Parameters
    ----------
    s : OuSchedule
        forward process.
    t : float
        time, nonnegative.

    Returns
    -------
    TransitionParams

    """
    decay, var_t = _decay_and_var(s, float(t))
    return TransitionParams(decay=float(decay), var_t=float(var_t))


def diffuse_mixture(m: GaussianMixture, s: OuSchedule, t: float) -> GaussianMixture:
    """
    Exact forward marginal at time t: every component (w, mu, v) maps to
    (w, e^{-at} mu, e^{-2at} v + var_t)

    Parameters
    ----------
    m : GaussianMixture
        the time-zero density.
    s : OuSchedule
        forward process.
    t : float
        time, nonnegative.

    Returns
    -------
    GaussianMixture

    """
    kernel = transition_params(s, t)
    return GaussianMixture(
        m.weights,
        kernel.decay * m.means,
        kernel.decay ** 2 * m.variances + kernel.var_t,
    )


def forward_sample(x0, s: OuSchedule, t, rng):
    """
    Draw X(t) ~ N(e^{-at} x0, var_t I)

    Parameters
    ----------
    x0 : array-like, shape (dim,) or (n, dim)
        starting points.
    s : OuSchedule
        forward process.
    t : float or array-like, shape (n,)
        diffusion times, one per row.
    rng : np.random.Generator or int
        random stream.

    Returns
    -------
    np.ndarray
        same shape as x0.

    """
    stream, _ = as_stream(rng)
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim not in (1, 2):
        raise RejectedInputError("x0 must be a vector or a batch of vectors, got shape {}".format(x0.shape))
    points = x0.reshape(1, -1) if x0.ndim == 1 else x0

    decay, var_t = _decay_and_var(s, t)
    decay = np.broadcast_to(decay, (points.shape[0],))[:, None]
    std = np.sqrt(np.broadcast_to(var_t, (points.shape[0],)))[:, None]

    out = decay * points + std * stream.standard_normal(points.shape)
    return out[0] if x0.ndim == 1 else out


def conditional_score(x_t, x0, s: OuSchedule, t):
    """
    Score of the Gaussian transition kernel, -(x_t - e^{-at} x0) / var_t. This
    is the denoising score-matching target.

    Parameters
    ----------
    x_t : array-like
        diffused points.
    x0 : array-like
        starting points, same shape as x_t.
    s : OuSchedule
        forward process.
    t : float or array-like, shape (n,)
        diffusion times, strictly positive.

    Returns
    -------
    np.ndarray
        same shape as x_t.

    """
    x_t = np.asarray(x_t, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    if x_t.shape != x0.shape:
        raise RejectedInputError(
            "x_t {} and x0 {} must share a shape".format(x_t.shape, x0.shape)
        )
    decay, var_t = _decay_and_var(s, t)
    if np.any(var_t <= 0):
        raise SingularTimeError(
            "Conditional score is singular at t = 0 (transition variance vanishes)"
        )
    if x_t.ndim == 2:
        decay = np.broadcast_to(decay, (x_t.shape[0],))[:, None]
        var_t = np.broadcast_to(var_t, (x_t.shape[0],))[:, None]
    return -(x_t - decay * x0) / var_t


class AnalyticScoreField(ScoreField):
    """
    Exact time-t score of a Gaussian mixture pushed through the forward process
    """

    def __init__(self, mixture: GaussianMixture, schedule: OuSchedule):
        self.mixture = mixture
        self.schedule = schedule

    @property
    def dim(self) -> int:
        return self.mixture.dim

    def _evaluate_batch(self, t, x):
        decay, var_t = _decay_and_var(self.schedule, t)
        means = decay[:, None, None] * self.mixture.means[None]
        variances = (decay ** 2)[:, None, None] * self.mixture.variances[None] + var_t[:, None, None]
        return _mixture_score_points(self.mixture.weights, means, variances, x)

    def descriptor(self) -> dict:
        return {
            "kind": "analytic",
            "mixture": self.mixture.to_dict(),
            "schedule": self.schedule.to_dict(),
        }


def analytic_score(m: GaussianMixture, s: OuSchedule) -> ScoreField:
    """
    The exact auxiliary score oracle, evaluate(t, x) equals
    mixture_score(diffuse_mixture(m, s, t), x)
    """
    return AnalyticScoreField(m, s)
