from utils import _set_paths

_set_paths()

from scorefusion_python_sdk.scripts.fusion_utils import ConfigManager
from scorefusion_python_sdk.scripts.experiment.experiment_argument_parser import (
    ExperimentArgumentParser
)

config_object = ConfigManager()

# Call this method to set your config object attributes from a config file
# Can also pass kwarg 'filepath' to specify path to config file
config_object.set_config()

# overwrite object attributes like so
config_object.set_out_dir('data_store/walkthrough')
config_object.set_n_workers(2)
print(config_object.out_dir)

experiment_config = ExperimentArgumentParser().process_parameters_dictionary(
    config_object.experiment,
    out_dir=config_object.out_dir,
    n_workers=config_object.n_workers
)
print(experiment_config.schedule, experiment_config.fusion)
