from utils import _set_paths

_set_paths()

import numpy as np

from scorefusion_python_sdk.scripts.core import (
    GaussianMixture, Grid, OuSchedule, SimplexWeights
)
from scorefusion_python_sdk.scripts.diffusion.sampler import (
    ReverseConfig, fused_score, reverse_sample
)
from scorefusion_python_sdk.scripts.fusion.barycenter import barycenter_density_grid
from scorefusion_python_sdk.scripts.fusion.score_fusion import (
    FusionTrainConfig, assemble_quadratic, oracle_vs_dsm_check, solve_simplex_quadratic,
    sweep_t_tilde
)
from scorefusion_python_sdk.scripts.metrics import wasserstein1_1d


schedule = OuSchedule()
auxiliaries = [
    GaussianMixture([0.5, 0.5], [[-4.0], [4.0]], [[1.0], [1.0]]),
    GaussianMixture([0.5, 0.5], [[-2.0], [2.0]], [[0.5], [0.5]]),
]
lam_true = SimplexWeights([0.6, 0.4])

# The target is the KL barycenter of the auxiliaries, tabulated on a grid
target = barycenter_density_grid(auxiliaries, lam_true, Grid.covering(auxiliaries))
aux_fields = [m.score_field(schedule) for m in auxiliaries]

cfg = FusionTrainConfig.for_schedule(schedule)
data = target.sample(64, rng=0)

# Only 64 target samples, the weights still land near (0.6, 0.4)
quadratic = assemble_quadratic(aux_fields, data, schedule, cfg, rng=1)
solution = solve_simplex_quadratic(quadratic)
print("learned weights: {}".format(solution.weights.tolist()))

check = oracle_vs_dsm_check(aux_fields, target, schedule, cfg, rng=2)
print("denoising vs exact score gap: {:.4f}".format(check.gap))

sweep = sweep_t_tilde(
    aux_fields, target, schedule, cfg,
    t_tildes=np.array([0.01, 0.05, 0.2, 0.5]) * schedule.horizon_T,
    seeds=[0, 1, 2], lam_true=lam_true
)
print(sweep.groupby("t_tilde")["error"].median())

samples = reverse_sample(
    fused_score(aux_fields, solution.weights),
    ReverseConfig(schedule, n_samples=8096, seed=3)
)
print("W1 to truth: {:.4f}".format(wasserstein1_1d(samples, target.sample(8096, rng=4))))
