import logging
import math

from dataclasses import dataclass

import numpy as np

from numerize import numerize

from ..core import OuSchedule, SampleSet, ScoreField, SimplexWeights
from ..errors import DivergedTrajectoryError, RejectedInputError
from ..fusion_utils import execute_threading, make_stream

INTEGRATORS = ("exponential", "euler_maruyama")

# Trajectories per RNG block; fixed so output does not depend on worker count
BLOCK_SIZE = 1024


@dataclass(frozen=True)
class ReverseConfig:
    schedule: OuSchedule
    integrator: str = "exponential"
    n_samples: int = 8096
    seed: int = 0
    n_workers: int = 1

    def __post_init__(self):
        if self.integrator not in INTEGRATORS:
            raise RejectedInputError(
                "Integrator must be one of {}, got {}".format(INTEGRATORS, self.integrator)
            )
        if int(self.n_samples) != self.n_samples or self.n_samples < 1:
            raise RejectedInputError("n_samples must be a positive integer, got {}".format(self.n_samples))


class FusedScoreField(ScoreField):
    """
    Weighted combination sum_i lambda_i s_i(t, x) of frozen score fields.
    Zero-weight fields are skipped, so a one-hot weight reproduces its field
    bit for bit.
    """

    def __init__(self, fields, weights: SimplexWeights):
        fields = list(fields)
        if len(fields) == 0:
            raise RejectedInputError("Fusion needs at least one score field!")
        if weights.k != len(fields):
            raise RejectedInputError(
                "Got {} weights for {} score fields".format(weights.k, len(fields))
            )
        dims = {f.dim for f in fields}
        if len(dims) != 1:
            raise RejectedInputError("Score fields disagree on dimension: {}".format(sorted(dims)))

        self.fields = fields
        self.weights = weights
        self._dim = dims.pop()

    @property
    def dim(self) -> int:
        return self._dim

    def _evaluate_batch(self, t, x):
        out = None
        for lam, field in zip(self.weights.lam, self.fields):
            if lam == 0.0:
                continue
            term = field._evaluate_batch(t, x)
            term = term if lam == 1.0 else lam * term
            out = term if out is None else out + term
        return out

    def descriptor(self) -> dict:
        return {
            "kind": "fused",
            "weights": self.weights.tolist(),
            "fields": [f.descriptor() for f in self.fields],
        }


def fused_score(fields, w: SimplexWeights) -> ScoreField:
    """
    Drift correction of the process-level barycenter: the lambda-weighted sum
    of the auxiliary scores
    """
    return FusedScoreField(fields, w)


def _integrate_block(score: ScoreField, cfg: ReverseConfig, block: int, n_block: int):
    s = cfg.schedule
    stream = make_stream(cfg.seed, block)
    h = s.h
    sigma2 = s.sigma ** 2

    if cfg.integrator == "exponential":
        growth = math.exp(s.a * h)
        score_gain = sigma2 / s.a * math.expm1(s.a * h)
        noise_std = math.sqrt(sigma2 * math.expm1(2.0 * s.a * h) / (2.0 * s.a))
    else:
        growth = 1.0 + s.a * h
        score_gain = sigma2 * h
        noise_std = s.sigma * math.sqrt(h)

    y = math.sqrt(s.stationary_var) * stream.standard_normal((n_block, score.dim))
    for step in range(s.steps_N):
        t = s.horizon_T - step * h
        drift_score = score.evaluate(t, y)
        y = growth * y + score_gain * drift_score + noise_std * stream.standard_normal(y.shape)
        if not np.all(np.isfinite(y)):
            raise DivergedTrajectoryError(
                step,
                "Reverse trajectory block {} became non-finite at step {} (t = {:.4g})".format(
                    block, step, t
                )
            )
    return y


def reverse_sample(score: ScoreField, cfg: ReverseConfig) -> SampleSet:
    """
    Simulate the discretized backward SDE
    dY = (aY + sigma^2 score(T - lh, Y(lh))) dt + sigma dW on [lh, (l+1)h],
    Y(0) ~ N(0, sigma^2/2a I), with the score frozen at the left endpoint

    Parameters
    ----------
    score : ScoreField
        score used in the drift, eg a fused field.
    cfg : ReverseConfig
        schedule, integrator, sample count and seed.

    Returns
    -------
    SampleSet
        Y(T) for n_samples independent trajectories.

    """
    log = logging.getLogger(__name__)
    n_blocks = math.ceil(cfg.n_samples / BLOCK_SIZE)
    sizes = [min(BLOCK_SIZE, cfg.n_samples - b * BLOCK_SIZE) for b in range(n_blocks)]

    log.debug(
        "Reverse sampling {} trajectories ({} steps, {})".format(
            numerize.numerize(cfg.n_samples), cfg.schedule.steps_N, cfg.integrator
        )
    )
    blocks = execute_threading(
        lambda item: _integrate_block(score, cfg, item[0], item[1]),
        list(enumerate(sizes)),
        n_workers=cfg.n_workers,
    )
    return SampleSet(
        np.concatenate(blocks, axis=0),
        provenance="reverse_sample[{}]".format(cfg.integrator),
        seed=cfg.seed,
    )
