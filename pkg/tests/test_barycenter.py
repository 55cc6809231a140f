import numpy as np
import pytest

from scipy import stats

from scorefusion_python_sdk.scripts.core import GaussianMixture, Grid, SimplexWeights
from scorefusion_python_sdk.scripts.diffusion.ou_process import analytic_score
from scorefusion_python_sdk.scripts.errors import InsufficientGridError, RejectedInputError
from scorefusion_python_sdk.scripts.fusion.barycenter import (
    GridDensity, barycenter_density_grid, barycenter_log_partition, gaussian_barycenter,
    grid_inverse_cdf_sample
)
from scorefusion_python_sdk.scripts.fusion_utils import make_stream


def _random_gaussian_pair(rng):
    return [
        GaussianMixture.single(rng.uniform(-3.0, 3.0), rng.uniform(0.3, 2.0)),
        GaussianMixture.single(rng.uniform(-3.0, 3.0), rng.uniform(0.3, 2.0)),
    ]


def test_gaussian_barycenter_closed_form():
    a = GaussianMixture.single(0.0, 1.0)
    b = GaussianMixture.single(4.0, 4.0)
    bary = gaussian_barycenter([a, b], SimplexWeights([0.5, 0.5]))
    var = 1.0 / (0.5 / 1.0 + 0.5 / 4.0)
    assert bary.variances[0, 0] == pytest.approx(var, rel=1e-14)
    assert bary.means[0, 0] == pytest.approx(var * 0.5 * 4.0 / 4.0, rel=1e-14)


def test_gaussian_barycenter_vertex_returns_component():
    a = GaussianMixture.single(-1.0, 2.0)
    b = GaussianMixture.single(3.0, 0.5)
    assert gaussian_barycenter([a, b], SimplexWeights.vertex(2, 1)) is b


def test_gaussian_barycenter_rejects_mixtures(p1):
    with pytest.raises(RejectedInputError):
        gaussian_barycenter([p1, GaussianMixture.single(0.0, 1.0)], SimplexWeights.uniform(2))


def test_grid_barycenter_matches_gaussian_closed_form(rng):
    for _ in range(20):
        refs = _random_gaussian_pair(rng)
        w = SimplexWeights.from_clipped(rng.dirichlet([1.0, 1.0]))
        exact = gaussian_barycenter(refs, w)
        density = barycenter_density_grid(refs, w, Grid.covering(refs, n_points=4096))
        x = density.grid.axis_points(0)
        pdf = stats.norm.pdf(x, exact.means[0, 0], np.sqrt(exact.variances[0, 0]))
        np.testing.assert_allclose(density.values, pdf, atol=1e-6)
        assert density.integral() == pytest.approx(1.0, abs=1e-6)


def test_barycenter_of_identical_references_is_the_reference(p2):
    g = Grid.covering([p2], n_points=4096)
    density = barycenter_density_grid([p2, p2], SimplexWeights([0.3, 0.7]), g)
    expected = np.exp(p2.log_density(g.points))
    np.testing.assert_allclose(density.values, expected, atol=1e-9)
    assert density.log_Z == pytest.approx(0.0, abs=1e-9)


def test_log_partition_nonpositive(auxiliaries):
    # Weighted geometric mean of densities integrates to at most 1
    g = Grid.covering(auxiliaries, n_points=4096)
    for lam in (0.0, 0.25, 0.5, 0.9, 1.0):
        log_Z = barycenter_log_partition(auxiliaries, SimplexWeights.from_clipped([lam, 1.0 - lam]), g)
        assert log_Z <= 1e-9


def test_barycenter_accepts_callables(p1, p2):
    g = Grid.covering([p1, p2], n_points=2048)
    w = SimplexWeights([0.6, 0.4])
    from_mixtures = barycenter_density_grid([p1, p2], w, g)
    from_callables = barycenter_density_grid([p1.log_density, p2.log_density], w, g)
    np.testing.assert_allclose(from_mixtures.log_values, from_callables.log_values, rtol=1e-14)


def test_narrow_grid_is_rejected(p1, p2):
    with pytest.raises(InsufficientGridError):
        barycenter_density_grid([p1, p2], SimplexWeights.uniform(2), Grid(((-3.0, 3.0, 512),)))


def test_weight_count_must_match(p1, p2):
    with pytest.raises(RejectedInputError):
        barycenter_density_grid([p1, p2], SimplexWeights.uniform(3), Grid.covering([p1, p2]))


def test_two_dimensional_barycenter_integrates_to_one():
    a = GaussianMixture([1.0], [[0.0, 1.0]], [[1.0, 0.5]])
    b = GaussianMixture([0.5, 0.5], [[-1.0, 0.0], [1.0, 0.0]], [[0.5, 0.5], [0.5, 0.5]])
    density = barycenter_density_grid([a, b], SimplexWeights([0.4, 0.6]), Grid.covering([a, b], n_points=200))
    assert density.integral() == pytest.approx(1.0, abs=1e-6)
    assert density.values.shape == (200 * 200,)


def test_inverse_cdf_samples_follow_density():
    ref = GaussianMixture.single(1.0, 0.8)
    density = barycenter_density_grid([ref], SimplexWeights([1.0]), Grid.covering([ref], n_points=4096))
    samples = grid_inverse_cdf_sample(density, 5000, make_stream(11))
    result = stats.kstest(samples.values_1d(), "norm", args=(1.0, np.sqrt(0.8)))
    assert result.pvalue > 1e-3


def test_inverse_cdf_rejects_two_dimensional_density():
    g = Grid(((0.0, 1.0, 4), (0.0, 1.0, 4)))
    density = GridDensity(g, np.zeros(16))
    with pytest.raises(RejectedInputError):
        grid_inverse_cdf_sample(density, 10, make_stream(0))


@pytest.mark.parametrize("t", [0.1, 1.0, 3.0])
def test_grid_density_score_matches_analytic(schedule, t):
    ref = GaussianMixture.single(0.5, 0.7)
    density = barycenter_density_grid([ref], SimplexWeights([1.0]), Grid.covering([ref], n_points=4096))
    x = np.linspace(-2.0, 3.0, 11).reshape(-1, 1)
    np.testing.assert_allclose(
        density.score_field(schedule).evaluate(t, x),
        analytic_score(ref, schedule).evaluate(t, x),
        atol=1e-5,
    )


def test_grid_density_score_needs_positive_time(schedule, barycenter_target):
    with pytest.raises(RejectedInputError):
        barycenter_target.score_field(schedule).evaluate(0.0, [0.0])
