import math

import numpy as np
import pytest

from scipy import stats

from scorefusion_python_sdk.scripts.core import (
    GaussianMixture, Grid, SampleSet, ScoreField, SimplexWeights
)
from scorefusion_python_sdk.scripts.diffusion.ou_process import analytic_score
from scorefusion_python_sdk.scripts.diffusion.sampler import (
    BLOCK_SIZE, FusedScoreField, ReverseConfig, fused_score, reverse_sample
)
from scorefusion_python_sdk.scripts.errors import DivergedTrajectoryError, RejectedInputError
from scorefusion_python_sdk.scripts.fusion.barycenter import barycenter_density_grid
from scorefusion_python_sdk.scripts.fusion_utils import make_stream
from scorefusion_python_sdk.scripts.metrics import wasserstein1_1d


class ExplodingField(ScoreField):

    @property
    def dim(self):
        return 1

    def _evaluate_batch(self, t, x):
        return np.full_like(x, np.inf)


def test_one_hot_fusion_is_bit_exact(schedule, p1, p2):
    fields = [analytic_score(p1, schedule), analytic_score(p2, schedule)]
    fused = fused_score(fields, SimplexWeights.vertex(2, 1))
    x = np.linspace(-5.0, 5.0, 21).reshape(-1, 1)
    for t in (0.01, 1.0, 4.0):
        np.testing.assert_array_equal(fused.evaluate(t, x), fields[1].evaluate(t, x))


def test_fused_field_is_weighted_sum(schedule, p1, p2):
    fields = [analytic_score(p1, schedule), analytic_score(p2, schedule)]
    w = SimplexWeights([0.3, 0.7])
    x = np.linspace(-3.0, 3.0, 7).reshape(-1, 1)
    expected = 0.3 * fields[0].evaluate(0.5, x) + 0.7 * fields[1].evaluate(0.5, x)
    np.testing.assert_allclose(fused_score(fields, w).evaluate(0.5, x), expected, rtol=1e-14)


def test_fused_field_rejects_mismatched_weights(schedule, p1, p2):
    fields = [analytic_score(p1, schedule), analytic_score(p2, schedule)]
    with pytest.raises(RejectedInputError):
        FusedScoreField(fields, SimplexWeights.uniform(3))
    with pytest.raises(RejectedInputError):
        FusedScoreField([], SimplexWeights.uniform(1))


def test_reverse_config_validation(schedule):
    with pytest.raises(RejectedInputError):
        ReverseConfig(schedule, integrator="heun")
    with pytest.raises(RejectedInputError):
        ReverseConfig(schedule, n_samples=0)


@pytest.mark.parametrize("integrator", ["exponential", "euler_maruyama"])
def test_reverse_sample_with_exact_score(schedule, integrator):
    target = GaussianMixture.single(2.0, 0.5)
    samples = reverse_sample(
        analytic_score(target, schedule),
        ReverseConfig(schedule, integrator=integrator, n_samples=20_000, seed=1),
    )
    assert samples.n == 20_000
    assert samples.values_1d().mean() == pytest.approx(2.0, abs=0.05)
    assert samples.values_1d().var() == pytest.approx(0.5, abs=0.1)


def test_reverse_sample_independent_of_worker_count(short_schedule, p1):
    field = analytic_score(p1, short_schedule)
    n = 2 * BLOCK_SIZE + 100
    serial = reverse_sample(field, ReverseConfig(short_schedule, n_samples=n, seed=4, n_workers=1))
    pooled = reverse_sample(field, ReverseConfig(short_schedule, n_samples=n, seed=4, n_workers=3))
    np.testing.assert_array_equal(serial.rows, pooled.rows)
    assert serial.n == n


def test_reverse_sample_seeded(short_schedule, p2):
    field = analytic_score(p2, short_schedule)
    a = reverse_sample(field, ReverseConfig(short_schedule, n_samples=500, seed=9))
    b = reverse_sample(field, ReverseConfig(short_schedule, n_samples=500, seed=9))
    c = reverse_sample(field, ReverseConfig(short_schedule, n_samples=500, seed=10))
    assert a == b
    assert not a == c


def test_fused_gaussians_sample_their_barycenter(schedule):
    # Equal-variance Gaussians: the fused drift is exactly the score of N(1, 1)
    fields = [
        analytic_score(GaussianMixture.single(0.0, 1.0), schedule),
        analytic_score(GaussianMixture.single(2.0, 1.0), schedule),
    ]
    samples = reverse_sample(
        fused_score(fields, SimplexWeights([0.5, 0.5])),
        ReverseConfig(schedule, n_samples=20_000, seed=2),
    )
    truth = GaussianMixture.single(1.0, 1.0).sample(20_000, make_stream(99))
    assert wasserstein1_1d(samples, truth) < 0.05


def test_reverse_sample_reports_divergence(short_schedule):
    with pytest.raises(DivergedTrajectoryError) as info:
        reverse_sample(ExplodingField(), ReverseConfig(short_schedule, n_samples=10))
    assert info.value.step == 0


@pytest.mark.slow
def test_euler_maruyama_error_shrinks_with_step(schedule):
    target = GaussianMixture.single(2.0, 0.5)
    n = 200_000
    # Exact quantiles, so the distance carries no truth-sampling noise
    truth = SampleSet(2.0 + math.sqrt(0.5) * stats.norm.ppf((np.arange(n) + 0.5) / n))

    medians = []
    for steps_N in (250, 500, 1000):
        s = schedule.with_steps(steps_N)
        field = analytic_score(target, s)
        distances = [
            wasserstein1_1d(
                reverse_sample(field, ReverseConfig(s, integrator="euler_maruyama", n_samples=n,
                                                    seed=seed, n_workers=4)),
                truth,
            )
            for seed in range(5)
        ]
        medians.append(float(np.median(distances)))

    assert medians[0] >= medians[1] >= medians[2]


@pytest.mark.slow
def test_fused_mixture_scores_miss_the_barycenter(schedule, auxiliaries, lam_true):
    s = schedule.with_steps(200)
    target = barycenter_density_grid(auxiliaries, lam_true, Grid.covering(auxiliaries, n_points=1024))
    truth = target.sample(100_000, make_stream(41))
    cfg = ReverseConfig(s, n_samples=10_000, seed=42, n_workers=4)

    exact = reverse_sample(target.score_field(s), cfg)
    assert wasserstein1_1d(exact, truth) < 0.05

    # The diffused barycenter of mixtures is not the weighted sum of diffused scores for t > 0
    fused = reverse_sample(fused_score([analytic_score(m, s) for m in auxiliaries], lam_true), cfg)
    assert 0.1 < wasserstein1_1d(fused, truth) < 0.3
