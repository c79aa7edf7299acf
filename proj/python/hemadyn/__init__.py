"""Platelet dynamics models: mechanistic ODEs, hybrid UDEs and a GRU autoregressor."""

import json

from . import _core
from ._core import (
    DomainError,
    Error,
    IntegrationError,
    NumericalError,
    ParseError,
    PreconditionError,
    Schedule,
    compartment_names,
    model_ids,
    wilcoxon_one_sided,
)

__all__ = [
    "DomainError", "Error", "IntegrationError", "NumericalError", "ParseError", "PreconditionError",
    "Schedule", "compartment_names", "model_ids", "wilcoxon_one_sided",
    "population_params", "steady_state", "simulate", "smse", "fit", "predict", "test_smse",
    "cohort", "fit_all", "evaluate", "simulate_to_csv",
]


def _dump(obj):
    return "" if obj is None else json.dumps(obj)


def population_params(model="friberg"):
    return json.loads(_core.population_params(model))


def steady_state(model="friberg", params=None):
    return _core.steady_state(model, _dump(params))


def simulate(model, schedule, horizon, params=None, initial_state=None):
    """Daily states on days 0..horizon. Returns (days, rows) with C last in each row."""
    days, dim, flat = _core.simulate(model, _dump(params), schedule, horizon, initial_state)
    return days, [flat[i:i + dim] for i in range(0, len(flat), dim)]


def smse(observations, first_day, predictions, neighbor_weight=0.3):
    """Smoothed MSE of (day, value) pairs against predictions starting at first_day."""
    return _core.smse(list(observations), first_day, list(predictions), neighbor_weight)


def fit(model, patient_id, observations, schedule, n_train, config=None, seed=0):
    """Trains one model on the first n_train cycles; returns the fit as a dict."""
    return json.loads(_core.fit(model, patient_id, list(observations), schedule, n_train, _dump(config), seed))


def predict(fit_result, schedule, start_day, end_day):
    """Daily ln-platelet predictions; returns (first_day, values)."""
    return _core.predict(json.dumps(fit_result), schedule, start_day, end_day)


def test_smse(fit_result, patient_id, observations, schedule, n_train, neighbor_weight=0.3):
    return _core.test_smse(json.dumps(fit_result), patient_id, list(observations), schedule, n_train,
                           neighbor_weight)


# Run-level commands take the same keys as a run.json file.

def cohort(**config):
    return _core.cmd_cohort(json.dumps(config))


def fit_all(**config):
    return _core.cmd_fit(json.dumps(config))


def evaluate(**config):
    return _core.cmd_evaluate(json.dumps(config))


def simulate_to_csv(**config):
    return _core.cmd_simulate(json.dumps(config))
