from utils import _set_paths

_set_paths()

from scorefusion_python_sdk.scripts.fusion_utils import ConfigManager
from scorefusion_python_sdk.scripts.experiment.experiment import run_experiment
from scorefusion_python_sdk.scripts.experiment.experiment_argument_parser import (
    ExperimentArgumentParser
)


if __name__ == "__main__":

    config = ConfigManager()
    config.set_config()

    # A quick version of the canonical sweep
    experiment_dict = dict(config.experiment)
    experiment_dict["sizes"] = [32, 64]
    experiment_dict["seeds"] = [0, 1]
    experiment_dict["n_eval"] = 2048
    experiment_dict["n_repeats"] = 3

    experiment_config = ExperimentArgumentParser().process_parameters_dictionary(
        experiment_dict,
        out_dir=config.out_dir,
        n_workers=config.n_workers
    )
    report = run_experiment(experiment_config)

    print(report.summary())
