"""Python access to the paincast C++ core."""

import json

from ._paincast import (
    PaincastError,
    acf,
    adf_test,
    arima_forecast,
    auroc_binary,
    auroc_macro,
    dba,
    dtw_distance,
    kmeans_dtw,
    mae,
    nmi,
    pacf,
    r2,
    set_threads,
)
from . import _paincast

__all__ = [
    "PaincastError",
    "acf",
    "adf_test",
    "arima_forecast",
    "arima_grid_search",
    "auroc_binary",
    "auroc_macro",
    "dba",
    "dtw_distance",
    "kmeans_dtw",
    "mae",
    "nmi",
    "pacf",
    "r2",
    "run_long_term",
    "run_short_term",
    "set_threads",
    "synth",
]


def arima_grid_search(y):
    """Minimum-AIC ARIMA fit of `y`, as a dict."""
    return json.loads(_paincast.arima_grid_search(y))


def synth(out_dir, **config):
    """Write a synthetic cohort to `out_dir`. Keyword arguments override generator defaults."""
    return _paincast.synth(str(out_dir), json.dumps(config))


def run_short_term(cohort_dir, **config):
    return json.loads(_paincast.run_short_term(str(cohort_dir), json.dumps(config)))


def run_long_term(cohort_dir, **config):
    return json.loads(_paincast.run_long_term(str(cohort_dir), json.dumps(config)))
