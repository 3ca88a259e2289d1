import hashlib
import json
import math
from typing import Any, Mapping

import numpy as np

STAGES = ("gen-stats", "binarize", "train", "extract", "evaluate", "make-synthetic")


def stage_rng(seed: int, stage: str) -> np.random.Generator:
    """The random generator of one pipeline stage.

    Every stage seeds from `SeedSequence([seed, index])`, where `index` is the
    stage's position in `STAGES`, so stages can be rerun on their own.
    """
    return np.random.default_rng(np.random.SeedSequence([seed, STAGES.index(stage)]))


def config_hash(values: Mapping[str, Any]) -> str:
    """A short, stable digest of a settings mapping"""
    payload = json.dumps(dict(values), sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def format_float(value: float) -> str:
    """Shortest text that parses back to exactly `value`.

    Integral values render without a fractional part, so thresholds such as
    `44916.0` print as `44916`.
    """
    value = float(value)
    if math.isfinite(value) and value == int(value) and abs(value) < 2**53:
        return str(int(value))

    return repr(value)
