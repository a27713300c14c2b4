"""Retrieval poisoning toolkit.

Thin Python layer over the C++ core. Reports come back as dicts parsed from
the same JSON the CLI writes.
"""

import json

from ._core import (
    ConfigError,
    DataError,
    Error,
    Experiment,
    allocate_budgets,
    config_hash,
    config_json,
    extract_urls,
    lexical_f1,
    normalize_for_dedup,
    normalize_url,
    split_tokens,
)

__all__ = [
    "ConfigError",
    "DataError",
    "Error",
    "Experiment",
    "allocate_budgets",
    "config_hash",
    "config_json",
    "evaluate",
    "extract_urls",
    "lexical_f1",
    "normalize_for_dedup",
    "normalize_url",
    "split_tokens",
    "sweep",
    "transfer",
]


def evaluate(experiment):
    return json.loads(experiment.evaluate_json())


def transfer(experiment):
    return json.loads(experiment.transfer_json())


def sweep(experiment):
    return json.loads(experiment.sweep_json())
