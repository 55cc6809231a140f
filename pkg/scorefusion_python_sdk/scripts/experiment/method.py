import logging

from dataclasses import dataclass, field, replace

from ..core import Grid, SampleSet, ScoreField, SimplexWeights
from ..diffusion.score_net import MlpScoreNet, dsm_train
from ..fusion.score_fusion import fit_score_fusion
from ..fusion.vanilla_fusion import run_vanilla_fusion
from ..errors import RejectedInputError
from ..fusion_utils import make_stream, save_json_file_to_datastore
from .experiment_argument_parser import ExperimentConfig


@dataclass
class FitResult:
    score_field: ScoreField
    weights: SimplexWeights = None
    extra: dict = field(default_factory=dict)


class FitMethod:
    """
    One way of turning n target samples into a score field for reverse
    sampling. Subclasses implement _fit_processing.
    """
    name = None

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.log = logging.getLogger(self.__class__.__name__)

    def fit(self, data: SampleSet, seed: int, to_json: bool = False) -> FitResult:
        result = self._fit_processing(data, seed)

        if result.weights is not None:
            self.log.info(
                "{} n={} seed={}: weights {}".format(self.name, data.n, seed, result.weights.tolist())
            )
        if to_json:
            save_json_file_to_datastore(
                "{}_{}_{}_fit.json".format(self.name, data.n, seed),
                {
                    "method": self.name,
                    "weights": None if result.weights is None else result.weights.tolist(),
                    "field": result.score_field.descriptor(),
                    **result.extra,
                },
                self.config.out_dir,
            )
        return result

    def _fit_processing(self, data: SampleSet, seed: int) -> FitResult:
        pass


class ScoreFusionMethod(FitMethod):
    name = "scorefusion"

    def _fit_processing(self, data, seed):
        cfg = self.config
        result = fit_score_fusion(
            cfg.auxiliary_fields(), data, cfg.schedule, cfg.fusion,
            make_stream(seed, data.n, 1), solver=cfg.fusion_solver,
        )
        extra = {}
        if result.quadratic is not None:
            extra["quadratic"] = result.quadratic.to_dict()
        if result.curve is not None:
            extra["sgd_curve"] = result.curve
        return FitResult(result.fused_field, result.weights, extra)


class VanillaFusionMethod(FitMethod):
    name = "vanilla"

    def _fit_processing(self, data, seed):
        cfg = self.config
        mixtures = cfg.auxiliary_mixtures
        if mixtures is None:
            raise RejectedInputError("Vanilla fusion needs mixture auxiliaries, not trained nets")
        n_points = cfg.vanilla_grid_points if cfg.dim == 1 else min(cfg.vanilla_grid_points, 256)
        result = run_vanilla_fusion(
            data, mixtures, cfg.schedule, Grid.covering(mixtures, n_points=n_points), tau_max=cfg.tau_max
        )
        return FitResult(result.fused_field, result.weights, {
            "final_objective": result.trace.objective[-1],
            "final_gap": result.trace.gap[-1],
        })


class BaselineMethod(FitMethod):
    name = "baseline"

    def _fit_processing(self, data, seed):
        cfg = self.config
        net = MlpScoreNet.initialize(cfg.dim, cfg.schedule, make_stream(seed, data.n, 2))
        result = dsm_train(net, data, cfg.schedule, replace(cfg.baseline, seed=seed))
        return FitResult(result.net, None, {
            "best_epoch": result.best_epoch,
            "final_train_loss": result.train_curve[-1],
        })


METHODS = {
    ScoreFusionMethod.name: ScoreFusionMethod,
    VanillaFusionMethod.name: VanillaFusionMethod,
    BaselineMethod.name: BaselineMethod,
}
