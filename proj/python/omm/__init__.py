"""Two-tier opinion market model: fitting, simulation and what-if analysis."""

import json as _json

from . import _omm
from ._omm import DataError, Dataset, Model, NumericalError, kl_shares, load_dataset, load_model, smape

__all__ = [
    "DataError",
    "Dataset",
    "Model",
    "NumericalError",
    "elasticities",
    "fit",
    "holdout",
    "kl_shares",
    "load_dataset",
    "load_model",
    "model_params",
    "model_summary",
    "run_cli",
    "simulate",
    "smape",
    "synthetic",
    "whatif",
]


def synthetic(groups=1, samples=1, bins=300, seed=0, threads=1):
    """Returns (datasets, truth) for the default synthetic ecosystem."""
    bundles, truth = _omm.synthetic(groups, samples, bins, seed, threads)
    return bundles, _json.loads(truth)


def fit(dataset, seed=0, threads=1, **options):
    """Fits both tiers. Keyword options follow the fit section of a config file,
    e.g. feature_mode="raw", n_restarts=1, lambda_reg=0.5."""
    return _omm.fit(dataset, _json.dumps(options), seed, threads)


def model_params(model):
    return _json.loads(model._params_json())


def model_summary(model, dataset):
    return _json.loads(model._summary_json(dataset))


def simulate(model, dataset, start=1, end=0, replicates=20, seed=0, sample=0, threads=1):
    return _json.loads(_omm.simulate(model, dataset, start, end, replicates, seed, sample, threads))


def elasticities(model, dataset, range="", sample=0, threads=1):
    return _json.loads(_omm.elasticities(model, dataset, range, sample, threads))


def whatif(model, dataset, k, r, changepoint=0, n_sims=50, seed=0, horizon=0, sample=0, threads=1):
    return _json.loads(_omm.whatif(model, dataset, k, r, changepoint, n_sims, seed, horizon, sample, threads))


def holdout(dataset, obs_end=0, pred_end=0, replicates=5, seed=0, model=None, sample=0, **options):
    return _json.loads(
        _omm.holdout(dataset, obs_end, pred_end, replicates, _json.dumps(options), seed, model, sample)
    )


def run_cli(*args):
    """Runs `omm <args>` in-process; returns (exit_code, stdout, stderr)."""
    return _omm.run_cli([str(a) for a in args])
