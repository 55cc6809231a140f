import argparse
import logging
import os
import sys

from dataclasses import replace

import pandas as pd

from .core import GaussianMixture, SampleSet
from .diffusion.sampler import ReverseConfig, reverse_sample
from .diffusion.score_net import MlpScoreNet, dsm_train
from .errors import ConfigError, ScoreFusionError
from .experiment.experiment import run_experiment, w1_summary
from .experiment.experiment_argument_parser import ExperimentArgumentParser
from .experiment.field_store import load_field, save_field
from .experiment.method import METHODS
from .fusion_utils import (
    ConfigManager, base_dir, make_stream, resolve_out_dir, save_json_file_to_datastore
)
from .metrics import save_histogram

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2

log = logging.getLogger("scorefusion")


def _add_common_arguments(parser):
    parser.add_argument(
        "--config", type=str, default=os.path.join(base_dir, "config.yaml"),
        help="Path to the experiment config (YAML or JSON).",
    )
    parser.add_argument("--seed", type=int, default=0, help="Root random seed.")
    parser.add_argument("--out", type=str, default=None, help="Output directory.")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="scorefusion",
        description="Fuse pre-trained score models into a sampler for a data-scarce target.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("train-aux", help="Train one MLP score net per auxiliary mixture.")
    _add_common_arguments(p)
    p.add_argument("--n-train", type=int, default=10_000, help="Samples drawn per auxiliary.")

    p = commands.add_parser("fuse-score", help="Learn fusion weights by score matching.")
    _add_common_arguments(p)
    p.add_argument("--n", type=int, default=None, help="Target sample count, first size by default.")

    p = commands.add_parser("fuse-vanilla", help="Learn fusion weights with Frank-Wolfe on the KL objective.")
    _add_common_arguments(p)
    p.add_argument("--n", type=int, default=None, help="Target sample count, first size by default.")

    p = commands.add_parser("train-baseline", help="Train an MLP score net on the target samples alone.")
    _add_common_arguments(p)
    p.add_argument("--n", type=int, default=None, help="Target sample count, first size by default.")

    p = commands.add_parser("sample", help="Reverse-sample from a saved score field.")
    _add_common_arguments(p)
    p.add_argument("--field", type=str, required=True, help="Saved score field json.")
    p.add_argument("--n-samples", type=int, default=None, help="Sample count, n_eval by default.")

    p = commands.add_parser("evaluate", help="W1 of a sample csv against the target.")
    _add_common_arguments(p)
    p.add_argument("--samples", type=str, required=True, help="Samples csv written by sample.")

    p = commands.add_parser("experiment", help="Run the full size x seed x method sweep.")
    _add_common_arguments(p)
    p.add_argument("--workers", type=int, default=None, help="Experiment cell pool size.")

    return parser


def load_experiment_config(args):
    """
    Read the config file and turn it into an ExperimentConfig
    """
    manager = ConfigManager()
    manager.set_config(args.config)
    if args.out is not None:
        manager.set_out_dir(args.out)
    n_workers = getattr(args, "workers", None) or manager.n_workers
    parser = ExperimentArgumentParser(base_dir=os.path.dirname(os.path.abspath(args.config)))
    return parser.process_parameters_dictionary(manager.experiment, out_dir=manager.out_dir, n_workers=n_workers)


def _target_data(cfg, args):
    n = args.n or cfg.sizes[0]
    return cfg.target.sample(n, make_stream(args.seed, n, 0), provenance="target_train")


def train_aux(cfg, args):
    for i, aux in enumerate(cfg.auxiliaries):
        if not isinstance(aux, GaussianMixture):
            log.warning("Auxiliary {} is already a trained net, skipping".format(i))
            continue
        data = aux.sample(args.n_train, make_stream(args.seed, i, 10), provenance="aux_{}".format(i))
        net = MlpScoreNet.initialize(cfg.dim, cfg.schedule, make_stream(args.seed, i, 11))
        result = dsm_train(net, data, cfg.schedule, replace(cfg.baseline, seed=args.seed, val_fraction=0.1))
        save_field(result.net, os.path.join(resolve_out_dir(cfg.out_dir), "aux_{}.json".format(i)))
    return EXIT_OK


def _fit_and_save(method: str, cfg, args):
    data = _target_data(cfg, args)
    fit = METHODS[method](cfg).fit(data, args.seed, to_json=True)
    save_field(fit.score_field, os.path.join(resolve_out_dir(cfg.out_dir), "{}_field.json".format(method)))
    if fit.weights is not None:
        print("weights: {}".format(fit.weights.tolist()))
    return EXIT_OK


def fuse_score(cfg, args):
    return _fit_and_save("scorefusion", cfg, args)


def fuse_vanilla(cfg, args):
    return _fit_and_save("vanilla", cfg, args)


def train_baseline(cfg, args):
    return _fit_and_save("baseline", cfg, args)


def sample(cfg, args):
    field = load_field(args.field, dim=cfg.dim)
    samples = reverse_sample(field, ReverseConfig(
        schedule=cfg.schedule,
        integrator=cfg.integrator,
        n_samples=args.n_samples or cfg.n_eval,
        seed=args.seed,
    ))
    log.info("Samples written to {}".format(samples.to_csv("samples.csv", cfg.out_dir)))
    return EXIT_OK


def evaluate(cfg, args):
    try:
        frame = pd.read_csv(args.samples)
    except FileNotFoundError:
        raise ConfigError("Samples file not found: {}".format(args.samples))
    samples = SampleSet(frame.to_numpy(dtype=float), provenance=os.path.basename(args.samples))
    summary = w1_summary(samples, cfg.target, cfg.n_eval, cfg.n_repeats, args.seed)
    save_json_file_to_datastore("evaluation.json", summary, cfg.out_dir)
    save_histogram("hist_evaluated.csv", samples, bins=cfg.histogram_bins, out_dir=cfg.out_dir)
    print("W1: {:.4f} +- {:.4f}".format(summary["w1_mean"], summary["w1_se"]))
    return EXIT_OK


def experiment(cfg, args):
    report = run_experiment(cfg)
    print(report.summary().to_string(index=False))
    return EXIT_PARTIAL if report.partial else EXIT_OK


COMMAND_HANDLERS = {
    "train-aux": train_aux,
    "fuse-score": fuse_score,
    "fuse-vanilla": fuse_vanilla,
    "train-baseline": train_baseline,
    "sample": sample,
    "evaluate": evaluate,
    "experiment": experiment,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_experiment_config(args)
        return COMMAND_HANDLERS[args.command](cfg, args)
    except ConfigError as e:
        log.error("Config error: {}".format(e))
        return EXIT_CONFIG
    except ScoreFusionError as e:
        log.error("{}: {}".format(e.__class__.__name__, e))
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
