import pytest

from seqdistill import config, constants
from seqdistill.exceptions import ConfigError


def test_search_depth(settings):
    assert config.search_depth() == 4
    settings.SEQDISTILL_SEARCH_DEPTH = 2
    assert config.search_depth() == 2


def test_exploration(settings):
    assert config.exploration() == pytest.approx(0.7071, abs=1e-4)
    settings.SEQDISTILL_EXPLORATION = 2.0
    assert config.exploration() == 2.0


def test_shared_noise(settings):
    assert config.shared_noise()
    settings.SEQDISTILL_SHARED_NOISE = False
    assert not config.shared_noise()


def test_configure_file(settings, tmp_path):
    path = tmp_path / "settings.toml"
    path.write_text("search_depth = 3\nrules = 8\ntau_end = 0.01\n")

    applied = config.configure(path)
    assert applied == {"search_depth": 3, "rules": 8, "tau_end": 0.01}
    assert config.search_depth() == 3
    assert config.rules() == 8


def test_configure_overrides_take_precedence(settings, tmp_path):
    path = tmp_path / "settings.toml"
    path.write_text("epochs = 10\nhidden = 4\n")

    config.configure(path, epochs=3, hidden=constants.UNSET)
    assert config.epochs() == 3
    assert config.hidden() == 4


def test_configure_default_resets(settings):
    config.configure(layers=5)
    assert config.layers() == 5
    config.configure(layers=constants.DEFAULT)
    assert config.layers() == 2


def test_configure_int_as_float(settings):
    config.configure(lr_start=1)
    assert config.lr_start() == 1.0
    assert isinstance(config.lr_start(), float)


@pytest.mark.parametrize(
    "overrides, match",
    [
        ({"depth": 3}, 'Unknown setting "depth"'),
        ({"search_depth": "3"}, "must be an integer"),
        ({"search_depth": True}, "must be an integer"),
        ({"zscore_target": 1}, "must be a boolean"),
        ({"exploration": "high"}, "must be a number"),
        ({"reward_scorer": 3}, "must be of type str"),
    ],
)
def test_configure_invalid(settings, overrides, match):
    with pytest.raises(ConfigError, match=match):
        config.configure(**overrides)


def test_configure_bad_file(settings, tmp_path):
    with pytest.raises(ConfigError, match="Could not read config file"):
        config.configure(tmp_path / "missing.toml")

    path = tmp_path / "broken.toml"
    path.write_text("search_depth = \n")
    with pytest.raises(ConfigError, match="Could not read config file"):
        config.configure(path)


def test_snapshot(settings):
    snapshot = config.snapshot()
    assert snapshot["search_depth"] == 4
    assert snapshot["reward_scorer"] == "correlation"
    assert len(snapshot) == 22

    settings.SEQDISTILL_SEED = 7
    assert config.snapshot()["seed"] == 7
