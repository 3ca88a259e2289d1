"""Core way to access configuration"""

import tomllib
import types
from pathlib import Path
from typing import Any, Dict, Union

from seqdistill import constants
from seqdistill.exceptions import ConfigError

PREFIX = "SEQDISTILL_"

settings = types.SimpleNamespace()
"""
The active settings. Attributes are named `SEQDISTILL_<NAME>`. Populate it with
[seqdistill.config.configure][] or by setting attributes directly.
"""


def search_depth() -> int:
    """The maximum number of operators in a statistic, D.

    Returns:
        The depth bound. Defaults to 4.
    """
    return getattr(settings, "SEQDISTILL_SEARCH_DEPTH", 4)


def num_stats() -> int:
    """The number of statistics generated by the search, K.

    Returns:
        The statistic count. Defaults to 20.
    """
    return getattr(settings, "SEQDISTILL_NUM_STATS", 20)


def search_batch_size() -> int:
    """The batch size B used to score each simulation.

    Returns:
        The batch size. Defaults to 128.
    """
    return getattr(settings, "SEQDISTILL_SEARCH_BATCH_SIZE", 128)


def simulations() -> int:
    """Tree growth iterations per search tree.

    Returns:
        The simulation count. Defaults to 500.
    """
    return getattr(settings, "SEQDISTILL_SIMULATIONS", 500)


def exploration() -> float:
    """The UCT exploration constant c.

    Returns:
        The constant. Defaults to 1/sqrt(2).
    """
    return getattr(settings, "SEQDISTILL_EXPLORATION", constants.EXPLORATION)


def zscore_target() -> bool:
    """`True` if the search target is z-scored before computing rewards.

    Returns:
        The flag. Defaults to `True`.
    """
    return getattr(settings, "SEQDISTILL_ZSCORE_TARGET", True)


def reward_scorer() -> str:
    """The name of the registered reward scorer.

    Returns:
        The scorer name. Defaults to `"correlation"`.
    """
    return getattr(settings, "SEQDISTILL_REWARD_SCORER", "correlation")


def layers() -> int:
    """The number of logical layers, L.

    Returns:
        The layer count. Defaults to 2.
    """
    return getattr(settings, "SEQDISTILL_LAYERS", 2)


def hidden() -> int:
    """The hidden size H of each non-final logical layer.

    Returns:
        The hidden size. Defaults to 20.
    """
    return getattr(settings, "SEQDISTILL_HIDDEN", 20)


def rules() -> int:
    """The number of extracted rules, R. Must be even.

    Returns:
        The rule count. Defaults to 20.
    """
    return getattr(settings, "SEQDISTILL_RULES", 20)


def epochs() -> int:
    """Training epochs for the logical network.

    Returns:
        The epoch count. Defaults to 500.
    """
    return getattr(settings, "SEQDISTILL_EPOCHS", 500)


def train_batch_size() -> int:
    """Mini-batch size for the logical network.

    Returns:
        The batch size. Defaults to 128.
    """
    return getattr(settings, "SEQDISTILL_TRAIN_BATCH_SIZE", 128)


def lr_start() -> float:
    """Learning rate at the first epoch.

    Returns:
        The learning rate. Defaults to 0.1.
    """
    return getattr(settings, "SEQDISTILL_LR_START", 0.1)


def lr_end() -> float:
    """Learning rate at the last epoch.

    Returns:
        The learning rate. Defaults to 0.001.
    """
    return getattr(settings, "SEQDISTILL_LR_END", 0.001)


def tau_start() -> float:
    """Gumbel-softmax temperature at the first epoch.

    Returns:
        The temperature. Defaults to 1.0.
    """
    return getattr(settings, "SEQDISTILL_TAU_START", 1.0)


def tau_end() -> float:
    """Gumbel-softmax temperature at the last epoch.

    Returns:
        The temperature. Defaults to 0.0001.
    """
    return getattr(settings, "SEQDISTILL_TAU_END", 0.0001)


def shared_noise() -> bool:
    """`True` to share one Gumbel draw per selector across a mini-batch.

    Set it to `False` to draw noise per instance, which costs a softmax over
    the whole input for every user and selector.

    Returns:
        The flag. Defaults to `True`.
    """
    return getattr(settings, "SEQDISTILL_SHARED_NOISE", True)


def train_frac() -> float:
    """Fraction of users in the training split, validation included.

    Returns:
        The fraction. Defaults to 0.8.
    """
    return getattr(settings, "SEQDISTILL_TRAIN_FRAC", 0.8)


def valid_count() -> int:
    """Number of training-split users held out for validation.

    Returns:
        The count. Defaults to 1000.
    """
    return getattr(settings, "SEQDISTILL_VALID_COUNT", 1000)


def seed() -> int:
    """The global seed every stage seed is derived from.

    Returns:
        The seed. Defaults to 0.
    """
    return getattr(settings, "SEQDISTILL_SEED", 0)


def threads() -> int:
    """Worker threads for reward evaluation. Results do not depend on it.

    Returns:
        The thread count. Defaults to 1.
    """
    return getattr(settings, "SEQDISTILL_THREADS", 1)


def label_quantile() -> float:
    """Teacher-score quantile used to derive AUC labels when no labels file is given.

    Returns:
        The quantile in (0, 1). Defaults to 0.5.
    """
    return getattr(settings, "SEQDISTILL_LABEL_QUANTILE", 0.5)


_ACCESSORS = {
    func.__name__: func
    for func in (
        search_depth,
        num_stats,
        search_batch_size,
        simulations,
        exploration,
        zscore_target,
        reward_scorer,
        layers,
        hidden,
        rules,
        epochs,
        train_batch_size,
        lr_start,
        lr_end,
        tau_start,
        tau_end,
        shared_noise,
        train_frac,
        valid_count,
        seed,
        threads,
        label_quantile,
    )
}


def _check_type(key: str, value: Any) -> Any:
    default = _ACCESSORS[key]()
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f'Setting "{key}" must be a boolean, got {value!r}')
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f'Setting "{key}" must be an integer, got {value!r}')
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f'Setting "{key}" must be a number, got {value!r}')
        value = float(value)
    elif not isinstance(value, type(default)):
        raise ConfigError(f'Setting "{key}" must be of type {type(default).__name__}')

    return value


def configure(path: Union[str, Path, None] = None, **overrides: Any) -> Dict[str, Any]:
    """Load settings from a flat TOML file, then apply overrides.

    Keys are lower-case setting names without the `SEQDISTILL_` prefix, for
    example `search_depth = 4`. Overrides that are [seqdistill.constants.UNSET][]
    are ignored, and [seqdistill.constants.DEFAULT][] resets a setting.

    Args:
        path: An optional TOML file.
        **overrides: Settings that take precedence over the file.

    Returns:
        The settings that were applied, keyed by lower-case name.
    """
    values: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as f:
                values.update(tomllib.load(f))
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f'Could not read config file "{path}": {exc}') from exc

    values.update({key: val for key, val in overrides.items() if val is not constants.UNSET})

    applied = {}
    for key, value in values.items():
        if key not in _ACCESSORS:
            raise ConfigError(f'Unknown setting "{key}"')

        attr = PREFIX + key.upper()
        if value is constants.DEFAULT:
            if hasattr(settings, attr):
                delattr(settings, attr)
        else:
            setattr(settings, attr, _check_type(key, value))

        applied[key] = _ACCESSORS[key]()

    return applied


def snapshot() -> Dict[str, Any]:
    """Every setting's current value.

    Returns:
        A mapping of lower-case setting name to value.
    """
    return {name: func() for name, func in _ACCESSORS.items()}
