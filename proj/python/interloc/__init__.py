"""Python bindings for the interloc feedback-driven localization engine."""

import json as _json
from typing import Optional

from ._interloc import (  # noqa: F401
    DataError,
    Error,
    NumericError,
    UsageError,
    auc,
    binarize,
    fit_beta,
    gt_threshold,
    invert_not_contains,
    logical_and,
    recall_at_k,
    smooth_and_normalize,
    temporal_labels,
    tiou,
)
from . import _interloc

__all__ = [
    "DataError",
    "Error",
    "NumericError",
    "UsageError",
    "auc",
    "binarize",
    "config_hash",
    "default_config",
    "fit_beta",
    "generate",
    "gt_threshold",
    "invert_not_contains",
    "logical_and",
    "recall_at_k",
    "run_all",
    "run_stage",
    "smooth_and_normalize",
    "temporal_labels",
    "tiou",
]


def _dump(config: Optional[dict]) -> Optional[str]:
    return None if config is None else _json.dumps(config)


def default_config() -> dict:
    """The default pipeline configuration as a nested dict."""
    return _json.loads(_interloc.default_config_json())


def normalize_config(config: dict) -> dict:
    """Fills in defaults; raises UsageError on unknown keys or bad values."""
    return _json.loads(_interloc.normalize_config_json(_json.dumps(config)))


def config_hash(config: Optional[dict] = None, seed: Optional[int] = None) -> str:
    return _interloc.config_hash(_dump(config), seed)


def generate(workdir: str, config: Optional[dict] = None, seed: Optional[int] = None) -> str:
    return _interloc.generate(str(workdir), _dump(config), seed)


def run_all(workdir: str, config: Optional[dict] = None, seed: Optional[int] = None) -> str:
    return _interloc.run_all(str(workdir), _dump(config), seed)


def run_stage(stage: str, workdir: str, mode: str = "feedback", bypass: bool = False,
              use_host: bool = True) -> str:
    return _interloc.run_stage(stage, str(workdir), mode, bypass, use_host)
