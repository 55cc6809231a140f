from utils import _set_paths

_set_paths()

from scorefusion_python_sdk.scripts.core import GaussianMixture, Grid, OuSchedule, SimplexWeights
from scorefusion_python_sdk.scripts.fusion.barycenter import barycenter_density_grid
from scorefusion_python_sdk.scripts.fusion.score_fusion import (
    FusionTrainConfig, fit_score_fusion
)
from scorefusion_python_sdk.scripts.fusion.vanilla_fusion import run_vanilla_fusion


class CompareFusionMethods:

    def __init__(self, schedule, auxiliaries, target, to_csv):
        self.schedule = schedule
        self.auxiliaries = auxiliaries
        self.target = target
        self.to_csv = to_csv

    def score_fusion(self, data, solver):

        return fit_score_fusion(
            [m.score_field(self.schedule) for m in self.auxiliaries],
            data,
            self.schedule,
            FusionTrainConfig.for_schedule(self.schedule),
            rng=1,
            solver=solver
        ).weights

    def vanilla_fusion(self, data):

        result = run_vanilla_fusion(
            data, self.auxiliaries, self.schedule, tau_max=500
        )
        if self.to_csv:
            result.trace.to_csv("frank_wolfe_trace.csv")

        return result.weights


if __name__ == "__main__":

    schedule = OuSchedule()
    auxiliaries = [
        GaussianMixture([0.5, 0.5], [[-4.0], [4.0]], [[1.0], [1.0]]),
        GaussianMixture([0.5, 0.5], [[-2.0], [2.0]], [[0.5], [0.5]]),
    ]
    target = barycenter_density_grid(
        auxiliaries, SimplexWeights([0.3, 0.7]), Grid.covering(auxiliaries)
    )
    data = target.sample(10_000, rng=0)

    compare = CompareFusionMethods(schedule, auxiliaries, target, to_csv=True)

    print("score fusion (closed form): {}".format(compare.score_fusion(data, "closed_form").tolist()))
    print("score fusion (sgd): {}".format(compare.score_fusion(data, "sgd").tolist()))
    print("vanilla fusion: {}".format(compare.vanilla_fusion(data).tolist()))
