import math

import numpy as np
import pytest

from scipy import stats

from scorefusion_python_sdk.scripts.core import GaussianMixture, Grid, SampleSet, SimplexWeights
from scorefusion_python_sdk.scripts.errors import RejectedInputError
from scorefusion_python_sdk.scripts.fusion.barycenter import barycenter_density_grid
from scorefusion_python_sdk.scripts.metrics import (
    histogram, histogram_dataframe, kl_grid, save_histogram, tv_grid, wasserstein1_1d
)


def _merged_cdf_area(x, y):
    # Integral of |F_x - F_y| over the merged support
    support = np.sort(np.concatenate([x, y]))
    fx = np.searchsorted(np.sort(x), support[:-1], side="right") / len(x)
    fy = np.searchsorted(np.sort(y), support[:-1], side="right") / len(y)
    return float(np.sum(np.abs(fx - fy) * np.diff(support)))


def test_w1_of_shifted_points():
    assert wasserstein1_1d(SampleSet([0.0, 1.0, 2.0]), SampleSet([1.0, 2.0, 3.0])) == pytest.approx(1.0)


def test_w1_of_identical_samples_is_zero():
    a = SampleSet([3.0, -1.0, 2.0, 2.0])
    assert wasserstein1_1d(a, a) == 0.0


def test_w1_unequal_sizes_matches_cdf_area(rng):
    x = rng.standard_normal(100)
    y = rng.standard_normal(137) + 0.3
    value = wasserstein1_1d(SampleSet(x), SampleSet(y))
    assert value == pytest.approx(_merged_cdf_area(x, y), rel=1e-10)
    assert value == pytest.approx(stats.wasserstein_distance(x, y), rel=1e-10)


def test_w1_is_a_metric(rng):
    for _ in range(20):
        a, b, c = (SampleSet(rng.standard_normal(rng.integers(5, 60))) for _ in range(3))
        assert wasserstein1_1d(a, b) == pytest.approx(wasserstein1_1d(b, a), rel=1e-12)
        assert wasserstein1_1d(a, c) <= wasserstein1_1d(a, b) + wasserstein1_1d(b, c) + 1e-12


def test_w1_rejects_empty_and_multivariate():
    with pytest.raises(RejectedInputError):
        wasserstein1_1d(SampleSet(np.zeros((0, 1))), SampleSet([1.0]))
    with pytest.raises(RejectedInputError):
        wasserstein1_1d(SampleSet(np.zeros((3, 2))), SampleSet(np.zeros((3, 2))))


def _gaussian_density(mean, var, g):
    ref = GaussianMixture.single(mean, var)
    return barycenter_density_grid([ref], SimplexWeights([1.0]), g)


def test_kl_between_gaussians():
    g = Grid(((-15.0, 15.0, 8192),))
    p = _gaussian_density(0.0, 1.0, g)
    q = _gaussian_density(1.0, 1.0, g)
    assert kl_grid(p, q) == pytest.approx(0.5, abs=1e-4)
    assert kl_grid(p, p) == pytest.approx(0.0, abs=1e-12)


def test_kl_is_infinite_outside_support():
    g = Grid(((0.0, 1.0, 5),))
    p = np.array([0.0, 1.0, 1.0, 1.0, 0.0])
    q = np.array([1.0, 0.0, 1.0, 1.0, 1.0])
    assert kl_grid(p, q, g) == math.inf


def test_tv_of_disjoint_densities():
    g = Grid(((0.0, 4.0, 401),))
    x = g.axis_points(0)
    p = np.where(x < 1.99, 1.0, 0.0)
    q = np.where(x > 2.01, 1.0, 0.0)
    p /= g.integrate(p)
    q /= g.integrate(q)
    assert tv_grid(p, q, g) == pytest.approx(1.0, abs=1e-12)


def test_pinsker_inequality(rng):
    g = Grid(((-20.0, 20.0, 4096),))
    for _ in range(50):
        p = _gaussian_density(rng.uniform(-2.0, 2.0), rng.uniform(0.5, 2.0), g)
        q = _gaussian_density(rng.uniform(-2.0, 2.0), rng.uniform(0.5, 2.0), g)
        assert tv_grid(p, q) <= math.sqrt(kl_grid(p, q) / 2.0) + 1e-9


def test_grid_metrics_need_matching_shapes():
    g = Grid(((0.0, 1.0, 5),))
    with pytest.raises(RejectedInputError):
        tv_grid(np.ones(5), np.ones(4), g)
    with pytest.raises(RejectedInputError):
        kl_grid(np.ones(5), np.ones(5))


def test_histogram_counts_every_sample(rng):
    samples = SampleSet(rng.standard_normal(1000))
    counts, edges = histogram(samples, bins=100, range=(-10.0, 10.0))
    assert counts.sum() == 1000
    assert len(edges) == 101
    assert edges[1] - edges[0] == pytest.approx(0.2)


def test_histogram_rejects_bad_bins():
    with pytest.raises(RejectedInputError):
        histogram(SampleSet([1.0]), bins=0)


def test_histogram_dataframe_and_csv(tmp_path):
    samples = SampleSet([0.1, 0.2, 0.9])
    frame = histogram_dataframe(samples, bins=2, range=(0.0, 1.0))
    assert list(frame.columns) == ["bin_lo", "bin_hi", "count"]
    assert frame["count"].tolist() == [2, 1]

    path = save_histogram("hist.csv", samples, bins=2, range=(0.0, 1.0), out_dir=str(tmp_path))
    assert path == str(tmp_path / "hist.csv")
    assert (tmp_path / "hist.csv").read_text().splitlines()[0] == "bin_lo,bin_hi,count"
