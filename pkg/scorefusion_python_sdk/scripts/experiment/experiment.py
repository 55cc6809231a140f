import logging
import math
import os
import time

from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np
import pandas as pd

from numerize import numerize

from ..core import GaussianMixture, Grid, SimplexWeights, mixture_log_density
from ..diffusion.sampler import ReverseConfig, reverse_sample
from ..errors import RejectedInputError, SchemaMismatchError, ScoreFusionError
from ..fusion.barycenter import GridDensity, barycenter_density_grid
from ..fusion_utils import (
    check_numpy_correct_version, derive_seed, environment_fingerprint, execute_threading,
    load_json_file, make_stream, resolve_out_dir, save_json_file
)
from ..metrics import kl_grid, save_histogram, tv_grid, wasserstein1_1d
from .experiment_argument_parser import METHOD_NAMES, ExperimentConfig
from .field_store import check_schema_version
from .method import METHODS

REPORT_SCHEMA_VERSION = "1.0"
REPORT_FILENAME = "report.json"

# Keys excluded from the reproducible payload
TIMING_KEYS = ("created_at", "wall_clock_s")


@dataclass
class ExperimentReport:
    config: dict
    cells: list
    environment: dict = field(default_factory=dict)
    schema_version: str = REPORT_SCHEMA_VERSION
    created_at: str = None

    @property
    def partial(self) -> bool:
        return any(cell["status"] != "ok" for cell in self.cells)

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "created_at": self.created_at,
            "partial": self.partial,
            "environment": self.environment,
            "config": self.config,
            "cells": self.cells,
        }

    def payload(self) -> dict:
        """
        The report without wall-clock fields; equal for equal configs and seeds
        """
        document = self.to_dict()
        for key in TIMING_KEYS:
            document.pop(key, None)
        document["cells"] = [
            {k: v for k, v in cell.items() if k not in TIMING_KEYS} for cell in self.cells
        ]
        return document

    def save(self, out_dir: str = None):
        filepath = os.path.join(resolve_out_dir(out_dir), REPORT_FILENAME)
        save_json_file(filepath, self.to_dict())
        return filepath

    def summary(self):
        """
        Median W1 per (method, n) over seeds, as a dataframe
        """
        ok = [c for c in self.cells if c["status"] == "ok"]
        if not ok:
            return pd.DataFrame(columns=["method", "n", "w1_median"])
        frame = pd.DataFrame([{"method": c["method"], "n": c["n"], "w1": c["w1_mean"]} for c in ok])
        return frame.groupby(["method", "n"], as_index=False)["w1"].median().rename(columns={"w1": "w1_median"})


def load_report(filepath: str) -> ExperimentReport:
    """
    Read a report.json, rejecting unknown schema versions and invalid weights

    Parameters
    ----------
    filepath : str
        path to the report.

    Returns
    -------
    ExperimentReport

    """
    document = load_json_file(filepath)
    if not isinstance(document, dict):
        raise SchemaMismatchError("{} is not a report document".format(filepath))
    check_schema_version(document.get("schema_version"), REPORT_SCHEMA_VERSION, filepath)

    cells = document.get("cells", [])
    for cell in cells:
        if cell.get("lambda") is not None:
            try:
                SimplexWeights(cell["lambda"])
            except RejectedInputError as e:
                raise SchemaMismatchError("Report cell has invalid weights: {}".format(e))
    return ExperimentReport(
        config=document.get("config", {}),
        cells=cells,
        environment=document.get("environment", {}),
        schema_version=document["schema_version"],
        created_at=document.get("created_at"),
    )


def w1_summary(samples, target, n_eval: int, n_repeats: int, seed: int, *keys) -> dict:
    """
    W1 of samples against n_repeats fresh ground-truth draws of n_eval points,
    with the standard error over the repeats

    Parameters
    ----------
    samples : SampleSet
        generated samples, dim 1.
    target : GaussianMixture or GridDensity
        ground truth.
    n_eval : int
        size of every truth draw.
    n_repeats : int
        number of truth draws.
    seed : int
        root seed, the truth streams are (seed, *keys, 4, r).

    Returns
    -------
    dict
        w1_mean, w1_se and the per-draw distances.

    """
    draws = [
        wasserstein1_1d(samples, target.sample(n_eval, make_stream(seed, *keys, 4, r), provenance="truth"))
        for r in range(n_repeats)
    ]
    se = float(np.std(draws, ddof=1) / math.sqrt(len(draws))) if len(draws) > 1 else 0.0
    return {"w1_mean": float(np.mean(draws)), "w1_se": se, "w1_draws": draws}


class ExperimentRunner:
    """
    Sweep training-set sizes and seeds for every enabled method: draw target
    samples, fit, reverse-sample and score against fresh ground-truth draws

    Parameters
    ----------
    config : ExperimentConfig
        parsed experiment.

    """

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.log = logging.getLogger(self.__class__.__name__)
        self._histogram_range = self._target_range()

    def _target_range(self):
        target = self.config.target
        if isinstance(target, GridDensity):
            lo, hi, _ = target.grid.axes[0]
            return lo, hi
        lo, hi = target.support_bounds(n_std=8.0)
        return float(lo[0]), float(hi[0])

    def cells(self):
        return [
            (method, n, seed)
            for n in self.config.sizes
            for seed in self.config.seeds
            for method in self.config.methods
        ]

    def run(self, to_json: bool = False, to_csv: bool = False) -> ExperimentReport:
        cfg = self.config
        cells = self.cells()
        numpy_ok, numpy_version = check_numpy_correct_version()
        if not numpy_ok:
            self.log.warning("numpy {} is older than tested, streams may differ".format(numpy_version))
        self.log.info(
            "Running {} cells ({} methods, sizes {}, {} seeds), {} evaluation samples each".format(
                len(cells), len(cfg.methods), cfg.sizes, len(cfg.seeds), numerize.numerize(cfg.n_eval)
            )
        )
        results = execute_threading(
            lambda cell: self._run_cell(*cell, to_csv=to_csv), cells, n_workers=cfg.n_workers
        )

        report = ExperimentReport(
            config=cfg.raw,
            cells=results,
            environment=environment_fingerprint(),
            created_at=datetime.now(timezone.utc).isoformat(),
        )
        if report.partial:
            self.log.warning(
                "{} of {} cells failed".format(sum(c["status"] != "ok" for c in results), len(results))
            )
        if to_json:
            self.log.info("Report written to {}".format(report.save(cfg.out_dir)))
        return report

    def _run_cell(self, method: str, n: int, seed: int, to_csv: bool = False) -> dict:
        cfg = self.config
        cell = {"method": method, "n": int(n), "seed": int(seed), "status": "ok", "error": None,
                "lambda": None}
        start = time.perf_counter()
        try:
            data = cfg.target.sample(n, make_stream(seed, n, 0), provenance="target_train")
            fit = METHODS[method](cfg).fit(data, seed)
            if fit.weights is not None:
                cell["lambda"] = fit.weights.tolist()

            samples = reverse_sample(fit.score_field, ReverseConfig(
                schedule=cfg.schedule,
                integrator=cfg.integrator,
                n_samples=cfg.n_eval,
                seed=derive_seed(seed, n, 3, METHOD_NAMES.index(method)),
            ))
            cell.update(self._w1_summary(samples, seed, n))
            if fit.weights is not None and cfg.auxiliary_mixtures is not None:
                cell.update(self._density_diagnostics(fit.weights))

            if to_csv:
                cell["histogram"] = os.path.basename(save_histogram(
                    "hist_{}_{}_{}.csv".format(method, n, seed), samples,
                    bins=cfg.histogram_bins, range=self._histogram_range, out_dir=cfg.out_dir,
                ))
            self.log.info("{} n={} seed={}: W1 {:.4f} +- {:.4f}".format(
                method, n, seed, cell["w1_mean"], cell["w1_se"]
            ))
        except ScoreFusionError as e:
            self.log.warning("Cell {} n={} seed={} failed: {}".format(method, n, seed, e))
            cell["status"] = "failed"
            cell["error"] = "{}: {}".format(e.__class__.__name__, e)

        cell["wall_clock_s"] = time.perf_counter() - start
        return cell

    def _w1_summary(self, samples, seed: int, n: int) -> dict:
        cfg = self.config
        return w1_summary(samples, cfg.target, cfg.n_eval, cfg.n_repeats, seed, n)

    def _density_diagnostics(self, weights: SimplexWeights) -> dict:
        """
        TV and KL(target || barycenter at the learned weights) on a grid
        """
        cfg = self.config
        mixtures = cfg.auxiliary_mixtures
        target = cfg.target
        if isinstance(target, GridDensity):
            grid = target.grid
            target_values = target.values
        elif isinstance(target, GaussianMixture):
            grid = Grid.covering([target, *mixtures], n_points=4096)
            target_values = np.exp(mixture_log_density(target, grid.points))
        else:
            return {}
        fused = barycenter_density_grid(mixtures, weights, grid)
        return {
            "tv": tv_grid(target_values, fused.values, grid),
            "kl": kl_grid(target_values, fused.values, grid),
        }


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentReport:
    """
    Run the full sweep; with write=True the report.json and the
    hist_<method>_<n>_<seed>.csv files land in the output directory
    """
    return ExperimentRunner(cfg).run(to_json=write, to_csv=write)
