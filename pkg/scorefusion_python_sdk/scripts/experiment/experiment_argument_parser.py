import logging
import os

from dataclasses import dataclass, field

from ..core import GaussianMixture, Grid, OuSchedule, SimplexWeights
from ..diffusion.sampler import INTEGRATORS
from ..diffusion.score_net import DsmTrainConfig
from ..errors import ConfigError, ScoreFusionError
from ..fusion.barycenter import barycenter_density_grid
from ..fusion.score_fusion import FusionTrainConfig
from .field_store import load_field

METHOD_NAMES = ("scorefusion", "vanilla", "baseline")

# Quadrature resolution of barycenter targets
TARGET_GRID_POINTS = 4096


@dataclass
class ExperimentConfig:
    dim: int
    target: object
    auxiliaries: list
    schedule: OuSchedule
    fusion: FusionTrainConfig
    fusion_solver: str
    vanilla_grid_points: int
    tau_max: int
    baseline: DsmTrainConfig
    methods: list
    sizes: list
    seeds: list
    n_eval: int = 8096
    n_repeats: int = 10
    integrator: str = "exponential"
    histogram_bins: int = 100
    out_dir: str = None
    n_workers: int = None
    raw: dict = field(default_factory=dict)

    @property
    def auxiliary_mixtures(self):
        """
        The auxiliaries as mixtures, or None when any is a trained net
        """
        if all(isinstance(a, GaussianMixture) for a in self.auxiliaries):
            return list(self.auxiliaries)
        return None

    def auxiliary_fields(self):
        return [
            a.score_field(self.schedule) if isinstance(a, GaussianMixture) else a
            for a in self.auxiliaries
        ]


class ExperimentArgumentParser:
    """
    Turn a user-supplied experiment dictionary into an ExperimentConfig,
    filling defaults for optional keys and raising ConfigError for missing
    required ones

    Parameters
    ----------
    base_dir : str, optional
        directory relative checkpoint paths are resolved against.

    """

    def __init__(self, base_dir: str = None):
        self.base_dir = base_dir or os.getcwd()
        self.parameters_dict = None
        self.log = logging.getLogger(self.__class__.__name__)

        self.required_keys = [
            "auxiliaries",
            "target",
            "dim",
            "schedule",
            "fusion",
            "vanilla",
            "baseline",
            "methods",
            "sizes",
            "seeds",
            "n_eval",
            "n_repeats",
            "integrator",
            "histogram_bins",
        ]

        self.missing_base_key_methods = {
            "auxiliaries": self._handle_missing_auxiliaries,
            "target": self._handle_missing_target,
            "dim": self._handle_missing_dim,
            "schedule": self._handle_missing_schedule,
            "fusion": self._handle_missing_fusion,
            "vanilla": self._handle_missing_vanilla,
            "baseline": self._handle_missing_baseline,
            "methods": self._handle_missing_methods,
            "sizes": self._handle_missing_sizes,
            "seeds": self._handle_missing_seeds,
            "n_eval": self._handle_missing_n_eval,
            "n_repeats": self._handle_missing_n_repeats,
            "integrator": self._handle_missing_integrator,
            "histogram_bins": self._handle_missing_histogram_bins,
        }

    def process_parameters_dictionary(self, parameters_dict: dict, out_dir: str = None,
                                      n_workers: int = None) -> ExperimentConfig:
        """
        Fill missing keys, validate and build the experiment objects

        Parameters
        ----------
        parameters_dict : dict
            the experiment document.
        out_dir : str, optional
            output directory.
        n_workers : int, optional
            experiment pool size.

        Returns
        -------
        ExperimentConfig

        """
        if not isinstance(parameters_dict, dict):
            raise ConfigError("Experiment config must be a mapping!")
        self.parameters_dict = dict(parameters_dict)

        for missing_key in self._determine_missing_keys(self.parameters_dict):
            self.log.debug("Filling missing key {}".format(missing_key))
            self.missing_base_key_methods[missing_key]()

        try:
            return self._build(out_dir, n_workers)
        except ConfigError:
            raise
        except (ScoreFusionError, KeyError, TypeError, ValueError) as e:
            raise ConfigError("Invalid experiment config: {}".format(e))

    def _determine_missing_keys(self, parameters_dict: dict):
        return [key for key in self.required_keys if key not in parameters_dict]

    def _handle_missing_auxiliaries(self):
        raise ConfigError("Please pass auxiliaries (mixtures or checkpoints) in the config!")

    def _handle_missing_target(self):
        raise ConfigError("Please pass a target (mixture or barycenter weights) in the config!")

    def _handle_missing_dim(self):
        auxiliaries = self.parameters_dict["auxiliaries"]
        first = auxiliaries[0] if auxiliaries else {}
        if "mixture" not in first:
            raise ConfigError("Please pass dim when auxiliaries are checkpoints!")
        self.parameters_dict["dim"] = int(first["mixture"]["dim"])

    def _handle_missing_schedule(self):
        self.parameters_dict["schedule"] = OuSchedule().to_dict()

    def _handle_missing_fusion(self):
        self.parameters_dict["fusion"] = {}

    def _handle_missing_vanilla(self):
        self.parameters_dict["vanilla"] = {}

    def _handle_missing_baseline(self):
        self.parameters_dict["baseline"] = {}

    def _handle_missing_methods(self):
        self.parameters_dict["methods"] = ["scorefusion"]

    def _handle_missing_sizes(self):
        raise ConfigError("Please pass the training-set sizes to sweep!")

    def _handle_missing_seeds(self):
        self.parameters_dict["seeds"] = [0]

    def _handle_missing_n_eval(self):
        self.parameters_dict["n_eval"] = 8096

    def _handle_missing_n_repeats(self):
        self.parameters_dict["n_repeats"] = 10

    def _handle_missing_integrator(self):
        self.parameters_dict["integrator"] = "exponential"

    def _handle_missing_histogram_bins(self):
        self.parameters_dict["histogram_bins"] = 100

    def _build_auxiliaries(self, dim: int):
        auxiliaries = []
        for i, entry in enumerate(self.parameters_dict["auxiliaries"]):
            if "mixture" in entry:
                auxiliaries.append(GaussianMixture.from_dict(entry["mixture"]))
            elif "checkpoint" in entry:
                path = entry["checkpoint"]
                if not os.path.isabs(path):
                    path = os.path.join(self.base_dir, path)
                auxiliaries.append(load_field(path, dim=dim))
            else:
                raise ConfigError("Auxiliary {} needs a mixture or a checkpoint!".format(i))
        if len(auxiliaries) == 0:
            raise ConfigError("Please pass at least one auxiliary!")
        for i, aux in enumerate(auxiliaries):
            if aux.dim != dim:
                raise ConfigError("Auxiliary {} has dim {}, config says {}".format(i, aux.dim, dim))
        return auxiliaries

    def _build_target(self, auxiliaries, dim: int):
        entry = self.parameters_dict["target"]
        if "mixture" in entry:
            target = GaussianMixture.from_dict(entry["mixture"])
            if target.dim != dim:
                raise ConfigError("Target has dim {}, config says {}".format(target.dim, dim))
            return target
        if "barycenter" in entry:
            if not all(isinstance(a, GaussianMixture) for a in auxiliaries):
                raise ConfigError("A barycenter target needs mixture auxiliaries!")
            weights = SimplexWeights(entry["barycenter"]["weights"])
            grid = Grid.covering(auxiliaries, n_points=int(entry["barycenter"].get("grid_points", TARGET_GRID_POINTS)))
            return barycenter_density_grid(auxiliaries, weights, grid)
        raise ConfigError("Target needs a mixture or barycenter entry!")

    def _build(self, out_dir: str, n_workers: int) -> ExperimentConfig:
        params = self.parameters_dict
        dim = int(params["dim"])
        if dim != 1:
            raise ConfigError("Experiments report 1-D W1, got dim {}".format(dim))

        methods = list(params["methods"])
        if len(methods) == 0:
            raise ConfigError("Enable at least one method among {}".format(METHOD_NAMES))
        unknown = [m for m in methods if m not in METHOD_NAMES]
        if unknown:
            raise ConfigError("Unknown methods {}, choose from {}".format(unknown, METHOD_NAMES))

        sizes = [int(n) for n in params["sizes"]]
        if len(sizes) == 0 or any(n < 1 for n in sizes):
            raise ConfigError("Sizes must be positive integers!")
        if any(b <= a for a, b in zip(sizes[:-1], sizes[1:])):
            raise ConfigError("Sizes must be strictly increasing, got {}".format(sizes))

        if params["integrator"] not in INTEGRATORS:
            raise ConfigError("Integrator must be one of {}".format(INTEGRATORS))

        schedule = OuSchedule.from_dict(params["schedule"])
        fusion_params = dict(params["fusion"])
        fusion_solver = fusion_params.pop("solver", "closed_form")
        if fusion_solver not in ("closed_form", "sgd"):
            raise ConfigError("fusion.solver must be closed_form or sgd, got {}".format(fusion_solver))
        fusion = FusionTrainConfig(**fusion_params).resolved(schedule)

        baseline_params = dict(params["baseline"])
        baseline_params.setdefault("val_fraction", 0.2)
        baseline = DsmTrainConfig(**baseline_params)
        baseline.validate()

        auxiliaries = self._build_auxiliaries(dim)
        target = self._build_target(auxiliaries, dim)

        n_eval = int(params["n_eval"])
        n_repeats = int(params["n_repeats"])
        if n_eval < 1 or n_repeats < 1:
            raise ConfigError("n_eval and n_repeats must be positive!")

        return ExperimentConfig(
            dim=dim,
            target=target,
            auxiliaries=auxiliaries,
            schedule=schedule,
            fusion=fusion,
            fusion_solver=fusion_solver,
            vanilla_grid_points=int(params["vanilla"].get("grid_points", 4096)),
            tau_max=int(params["vanilla"].get("tau_max", 500)),
            baseline=baseline,
            methods=methods,
            sizes=sizes,
            seeds=[int(s) for s in params["seeds"]],
            n_eval=n_eval,
            n_repeats=n_repeats,
            integrator=params["integrator"],
            histogram_bins=int(params["histogram_bins"]),
            out_dir=out_dir,
            n_workers=n_workers,
            raw=params,
        )
