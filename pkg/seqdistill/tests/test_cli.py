import pytest

from seqdistill import cli, constants

SMALL = [
    "--depth",
    "3",
    "--num-stats",
    "2",
    "--search-batch-size",
    "32",
    "--simulations",
    "10",
    "--layers",
    "2",
    "--hidden",
    "3",
    "--rules",
    "4",
    "--epochs",
    "3",
    "--batch-size",
    "32",
    "--valid-count",
    "10",
]


@pytest.fixture
def data_dir(tmp_path, capsys):
    out = tmp_path / "data"
    assert cli.main(["make-synthetic", "rule-teacher", "--n", "60", "--out", str(out)]) == 0
    capsys.readouterr()
    return out


def _data_args(data_dir, workdir):
    return [
        "--out",
        str(workdir),
        "--schema",
        str(data_dir / "schema.json"),
        "--events",
        str(data_dir / "events.csv"),
        "--scores",
        str(data_dir / "scores.csv"),
    ]


def test_make_synthetic(tmp_path, capsys):
    out = tmp_path / "fixture"
    assert cli.main(["make-synthetic", "single-signal", "--n", "20", "--out", str(out)]) == 0

    printed = capsys.readouterr().out.splitlines()
    assert printed[0] == f"events: {out / 'events.csv'}"
    assert {line.split(":")[0] for line in printed} == {"events", "schema", "scores", "manifest"}
    assert (out / "manifest.json").exists()


def test_run_all(settings, data_dir, tmp_path, capsys):
    workdir = tmp_path / "work"
    assert cli.main(["run-all", *_data_args(data_dir, workdir), *SMALL]) == 0

    printed = capsys.readouterr().out
    assert "rules: 4\n" in printed
    assert "train.users: 38\n" in printed
    assert "test.fidelity: " in printed
    assert (workdir / "rules.txt").exists()
    assert settings.SEQDISTILL_RULES == 4


def test_stage_commands(settings, data_dir, tmp_path, capsys):
    workdir = tmp_path / "work"
    data = _data_args(data_dir, workdir)
    common = data[:4]

    gen_stats = ["--depth", "3", "--num-stats", "2", "--simulations", "10", "--valid-count", "10"]
    assert cli.main(["gen-stats", *data, *gen_stats]) == 0
    assert cli.main(["binarize", *common]) == 0
    train = ["--layers", "2", "--hidden", "3", "--rules", "4", "--epochs", "3"]
    assert cli.main(["train", *common, *train]) == 0
    assert cli.main(["extract", *common]) == 0
    capsys.readouterr()

    assert cli.main(["evaluate", *data, "--label-quantile", "0.7"]) == 0
    assert "labels: teacher scores above the 0.7 train quantile" in capsys.readouterr().out


def test_missing_scores(settings, data_dir, tmp_path, capsys):
    args = _data_args(data_dir, tmp_path / "work")
    args[-1] = str(tmp_path / "missing.csv")
    assert cli.main(["gen-stats", *args, *SMALL[:4], "--batch-size", "32"]) == 1

    err = capsys.readouterr().err
    assert "error: [gen-stats] DatasetError: Could not read" in err


def test_stage_out_of_order(settings, data_dir, tmp_path, capsys):
    args = _data_args(data_dir, tmp_path / "work")[:4]
    assert cli.main(["extract", *args]) == 1
    assert "checkpoint.json" in capsys.readouterr().err


def test_unknown_setting(settings, data_dir, tmp_path, capsys):
    config_file = tmp_path / "seqdistill.toml"
    config_file.write_text("search_width = 3\n")
    args = _data_args(data_dir, tmp_path / "work")
    assert cli.main(["gen-stats", "--config", str(config_file), *args]) == 1
    assert 'Unknown setting "search_width"' in capsys.readouterr().err


def test_config_file(settings, data_dir, tmp_path):
    config_file = tmp_path / "seqdistill.toml"
    config_file.write_text("search_depth = 2\nnum_stats = 1\nsimulations = 5\nseed = 3\n")
    args = _data_args(data_dir, tmp_path / "work")
    flags = ["--seed", "4", "--valid-count", "10"]
    assert cli.main(["gen-stats", "--config", str(config_file), *args, *flags]) == 0

    assert (settings.SEQDISTILL_SEARCH_DEPTH, settings.SEQDISTILL_SEED) == (2, 4)
    text = (tmp_path / "work" / "statistics.txt").read_text(encoding="utf-8")
    assert "# seed=4" in text


def test_missing_out():
    with pytest.raises(SystemExit) as exc_info:
        cli.main(["binarize", "--schema", "schema.json"])

    assert exc_info.value.code == 2


def test_parse_args_defaults():
    args = cli.parse_args(
        ["run-all", "--out", "w", "--schema", "s", "--events", "e", "--scores", "y"]
    )
    assert args.seed is constants.UNSET
    assert args.search_depth is constants.UNSET
    assert args.shared_noise is constants.UNSET
    assert args.strategy == "mcts"
    assert args.labels is None


def test_search_batch_size_flags():
    common = ["--out", "w", "--schema", "s", "--events", "e", "--scores", "y"]
    args = cli.parse_args(["gen-stats", *common, "--batch-size", "64"])
    assert args.search_batch_size == 64

    args = cli.parse_args(
        ["run-all", *common, "--search-batch-size", "64", "--batch-size", "16"]
    )
    assert (args.search_batch_size, args.train_batch_size) == (64, 16)

    args = cli.parse_args(
        ["train", "--out", "w", "--schema", "s", "--no-shared-noise", "--tau-end", "0.05"]
    )
    assert args.shared_noise is False
    assert args.tau_end == 0.05
