import yaml
import logging
import os
import json
import platform

import numpy as np
import pandas as pd
import scipy

from concurrent.futures import ThreadPoolExecutor

from .errors import ConfigError


# Get the absolute path of the current script
current_script_path = os.path.abspath(__file__)
base_dir = os.path.abspath(
    os.path.join(current_script_path, '..', '..', '..')
)
package_dir = base_dir + '/scorefusion_python_sdk/'

OUT_DIR_ENV_VAR = "SCOREFUSION_OUT_DIR"

logging.basicConfig(
    format='{asctime} {levelname}: {message}',
    datefmt='%m/%d/%Y %I:%M:%S %p',
    style='{',
    level=logging.INFO
)


def execute_threading(function, items: list, n_workers: int = None):
    """
    Map a function over items in a thread pool, keeping submission order

    Parameters
    ----------
    function : callable
        function applied to each item.
    items : list
        work items.
    n_workers : int, optional
        pool size, None lets the executor decide. 1 runs inline.

    Returns
    -------
    list
        results in the order of items.

    """
    if n_workers == 1:
        return [function(item) for item in items]

    with ThreadPoolExecutor(max_workers=n_workers) as executor:
        results = list(executor.map(function, items))
    return results


def make_stream(seed: int, *keys: int):
    """
    Build an independent random stream from a seed and a tuple of integer keys

    Parameters
    ----------
    seed : int
        root seed.
    *keys : int
        substream coordinates, eg trajectory block or experiment cell.

    Returns
    -------
    np.random.Generator
        PCG64 generator seeded from SeedSequence([seed, *keys]).

    """
    entropy = [int(seed)] + [int(key) for key in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *keys: int) -> int:
    """
    Integer seed for a sub-task, eg the reverse sampler of one experiment cell
    """
    entropy = [int(seed)] + [int(key) for key in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def as_stream(rng):
    """
    Accept either an int seed or an existing generator
    """
    if isinstance(rng, np.random.Generator):
        return rng, None
    return make_stream(rng), int(rng)


class ConfigManager:

    def __init__(self):

        self.experiment = None
        self.out_dir = None
        self.n_workers = None
        self.log_level = "INFO"

    def set_config(self, filepath: str = os.path.join(base_dir, "config.yaml")):

        try:
            with open(filepath, 'r') as file:
                config_file = yaml.safe_load(file)
        except FileNotFoundError:
            raise ConfigError("Config file not found: {}".format(filepath))
        except yaml.YAMLError as e:
            raise ConfigError("Config file {} is not valid YAML/JSON: {}".format(filepath, e))

        if not isinstance(config_file, dict):
            raise ConfigError("Config file {} must hold a mapping!".format(filepath))

        self.set_experiment(config_file)
        self.set_out_dir(config_file.get('output_dir', 'data_store'))
        self.set_n_workers(config_file.get('n_workers'))
        self.set_log_level(config_file.get('log_level', 'INFO'))

    def set_experiment(self, value):
        self.experiment = value

    def set_out_dir(self, value):
        # Environment override is the only env-based setting
        self.out_dir = os.environ.get(OUT_DIR_ENV_VAR, value)

    def set_n_workers(self, value):
        self.n_workers = value

    def set_log_level(self, value):
        self.log_level = value
        logging.getLogger().setLevel(value)


def resolve_out_dir(out_dir: str = None):
    """
    Resolve an output directory, creating it if needed. Relative paths are
    taken from the package data store.

    Parameters
    ----------
    out_dir : str, optional
        requested directory.

    Returns
    -------
    str
        absolute path to an existing directory.

    """
    out_dir = os.environ.get(OUT_DIR_ENV_VAR, out_dir)
    if out_dir is None:
        out_dir = os.path.join(package_dir, 'data_store')
    elif not os.path.isabs(out_dir):
        out_dir = os.path.join(package_dir, out_dir)

    os.makedirs(out_dir, exist_ok=True)
    return out_dir


def save_json_file(filepath: str, data: dict):
    """
    Save a dictionary as a json file

    Parameters
    ----------
    filepath : str
        destination path.
    data : dict
        dictionary of data.

    """
    with open(filepath, 'w') as f:
        json.dump(data, f, indent=2, sort_keys=True)


def load_json_file(filepath: str):
    with open(filepath, 'r') as f:
        return json.load(f)


def save_json_file_to_datastore(filename: str, data: dict, out_dir: str = None):
    """
    Save a dictionary as json file to the output directory

    Parameters
    ----------
    filename : str
        filename of json.
    data : dict
        dictionary of data.
    out_dir : str, optional
        output directory, defaults to the data store.

    """
    filepath = os.path.join(resolve_out_dir(out_dir), filename)
    save_json_file(filepath, data)
    return filepath


def save_csv_to_datastore(filename: str, dataframe, out_dir: str = None):
    """
    For a given filename, save pandas dataframe as a csv to the output
    directory, overwriting previous content

    Parameters
    ----------
    filename : str
        name of file.
    dataframe : pd.DataFrame
        pandas dataframe
    out_dir : str, optional
        output directory, defaults to the data store.

    """
    filepath = os.path.join(resolve_out_dir(out_dir), filename)
    dataframe.to_csv(filepath, index=False)
    return filepath


def make_dataframe(columns: dict):
    """
    Build a dataframe from a dictionary of equally long columns
    """
    return pd.DataFrame({key: np.asarray(value) for key, value in columns.items()})


def environment_fingerprint():
    """
    Versions of the interpreter and numerical stack, stored with every report
    """
    return {
        "python": platform.python_version(),
        "platform": platform.platform(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
    }


def check_numpy_correct_version():
    """
    Check the installed numpy is recent enough for the PCG64 stream helpers

    Returns
    -------
    bool, Version
        whether the installed version is recent enough and the version.

    """
    from packaging import version

    current_version = version.parse(np.__version__)
    required_version = version.parse("1.26.0")

    return current_version >= required_version, current_version
