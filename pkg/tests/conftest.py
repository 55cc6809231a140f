import math

import numpy as np
import pytest

from scorefusion_python_sdk.scripts.core import GaussianMixture, Grid, OuSchedule, SimplexWeights
from scorefusion_python_sdk.scripts.fusion.barycenter import barycenter_density_grid
from scorefusion_python_sdk.scripts.fusion_utils import OUT_DIR_ENV_VAR


@pytest.fixture(autouse=True)
def no_out_dir_override(monkeypatch):
    monkeypatch.delenv(OUT_DIR_ENV_VAR, raising=False)


@pytest.fixture
def schedule():
    return OuSchedule(a=1.0, sigma=math.sqrt(2.0), horizon_T=5.0, steps_N=500)


@pytest.fixture
def short_schedule():
    return OuSchedule(a=1.0, sigma=math.sqrt(2.0), horizon_T=5.0, steps_N=50)


@pytest.fixture
def p1():
    return GaussianMixture([0.5, 0.5], [[-4.0], [4.0]], [[1.0], [1.0]])


@pytest.fixture
def p2():
    return GaussianMixture([0.5, 0.5], [[-2.0], [2.0]], [[0.5], [0.5]])


@pytest.fixture
def auxiliaries(p1, p2):
    return [p1, p2]


@pytest.fixture
def lam_true():
    return SimplexWeights([0.6, 0.4])


@pytest.fixture
def barycenter_target(auxiliaries, lam_true):
    return barycenter_density_grid(auxiliaries, lam_true, Grid.covering(auxiliaries, n_points=4096))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_simplex_points(rng, k, n):
    return [SimplexWeights.from_clipped(rng.dirichlet(np.ones(k))) for _ in range(n)]


def simplex_grid_2(resolution):
    steps = int(round(1.0 / resolution))
    return [SimplexWeights.from_clipped([i / steps, 1.0 - i / steps]) for i in range(steps + 1)]


def simplex_grid_3(resolution):
    steps = int(round(1.0 / resolution))
    points = []
    for i in range(steps + 1):
        for j in range(steps + 1 - i):
            points.append(SimplexWeights.from_clipped([i / steps, j / steps, (steps - i - j) / steps]))
    return points


@pytest.fixture
def small_experiment(p1, p2):
    """
    A seconds-scale version of the canonical experiment document
    """
    return {
        "dim": 1,
        "auxiliaries": [{"mixture": p1.to_dict()}, {"mixture": p2.to_dict()}],
        "target": {"barycenter": {"weights": [0.6, 0.4], "grid_points": 1024}},
        "schedule": {"a": 1.0, "sigma": math.sqrt(2.0), "horizon_T": 5.0, "steps_N": 50},
        "fusion": {"n_mc": 2000},
        "vanilla": {"grid_points": 512, "tau_max": 20},
        "baseline": {"epochs": 2, "batch_size": 16},
        "methods": ["scorefusion", "vanilla", "baseline"],
        "sizes": [32],
        "seeds": [0],
        "n_eval": 256,
        "n_repeats": 3,
        "integrator": "exponential",
        "histogram_bins": 20,
    }
