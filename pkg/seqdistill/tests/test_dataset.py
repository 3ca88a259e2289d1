import numpy as np
import pytest

from seqdistill import dataset as dataset_module
from seqdistill.dataset import (
    CATEGORICAL,
    NUMERICAL,
    Column,
    Schema,
    load_dataset,
    load_labels,
    sample_batch,
    split,
    write_dataset,
)
from seqdistill.exceptions import (
    ConfigError,
    DatasetError,
    MissingScoreError,
    NonFiniteError,
    SchemaError,
    SplitError,
    UnknownColumnError,
    VocabularyError,
)

SCHEMA_JSON = (
    '{"columns": [{"name": "type", "kind": "categorical", "vocab": ["A", "B"]},'
    ' {"name": "amount", "kind": "numerical"}]}'
)


@pytest.fixture
def files(tmp_path):
    """Write events, schema and scores files and return their paths"""

    def write(events, scores="user_id,score\nu1,1.5\nu2,-2\n", schema=SCHEMA_JSON):
        paths = (tmp_path / "events.csv", tmp_path / "schema.json", tmp_path / "scores.csv")
        for path, text in zip(paths, (events, schema, scores)):
            path.write_text(text, encoding="utf-8")
        return paths

    return write


@pytest.mark.parametrize(
    "kwargs, match",
    [
        ({"name": "", "kind": NUMERICAL}, "non-empty"),
        ({"name": "a=b", "kind": NUMERICAL}, "reserved characters"),
        ({"name": "a∘b", "kind": NUMERICAL}, "reserved characters"),
        ({"name": " a", "kind": NUMERICAL}, "reserved characters"),
        ({"name": "user_id", "kind": NUMERICAL}, "reserved for the user field"),
        ({"name": "a", "kind": CATEGORICAL}, "empty vocab"),
        ({"name": "a", "kind": CATEGORICAL, "vocab": ("x", "x")}, "duplicate"),
        ({"name": "a", "kind": CATEGORICAL, "vocab": ("x]",)}, "reserved characters"),
        ({"name": "a", "kind": NUMERICAL, "vocab": ("x",)}, "cannot declare a vocab"),
        ({"name": "a", "kind": "ordinal"}, "unknown kind"),
    ],
)
def test_invalid_column(kwargs, match):
    with pytest.raises(SchemaError, match=match):
        Column(**kwargs)


def test_schema(schema):
    assert schema.names == ["type", "amount", "duration"]
    assert [col.name for col in schema.categorical] == ["type"]
    assert [col.name for col in schema.numerical] == ["amount", "duration"]
    assert "amount" in schema
    assert schema.column("type").codes == {"A": 0, "B": 1, "C": 2}
    assert Schema.from_dict(schema.to_dict()) == schema

    with pytest.raises(SchemaError, match='Unknown column "price"'):
        schema.column("price")


def test_invalid_schema():
    with pytest.raises(SchemaError, match="at least one column"):
        Schema(columns=())
    with pytest.raises(SchemaError, match="unique"):
        Schema(columns=(Column("a", NUMERICAL), Column("a", NUMERICAL)))
    with pytest.raises(SchemaError, match="Malformed schema"):
        Schema.from_dict({"cols": []})


def test_load_dataset(files):
    paths = files("user_id,type,amount\nu2,A,1\nu1,B,2.5\nu2,B,-3\n")
    d = load_dataset(*paths)

    assert d.user_ids == ["u2", "u1"]
    assert d.sequences[0].rows == (("A", 1.0), ("B", -3.0))
    assert d.sequences[1].rows == (("B", 2.5),)
    assert d.teacher_scores == (-2.0, 1.5)
    assert np.array_equal(d.table.columns["type"], [0, 1, 1])
    assert np.array_equal(d.table.offsets, [0, 2, 3])


def test_load_dataset_ignores_extra_scores(files):
    paths = files(
        "user_id,type,amount\nu1,A,1\nu2,A,2\n",
        scores="user_id,score\nu1,1\nu2,2\nu3,3\n",
    )
    assert len(load_dataset(*paths)) == 2


@pytest.mark.parametrize(
    "events, scores, error, row",
    [
        ("user_id,type,price\nu1,A,1\n", None, UnknownColumnError, 1),
        ("user_id,type\nu1,A\n", None, DatasetError, 1),
        ("user_id,type,amount\nu1,A,1\nu2,D,2\n", None, VocabularyError, 3),
        ("user_id,type,amount\nu1,A,1\nu2,A,nan\n", None, NonFiniteError, 3),
        ("user_id,type,amount\nu1,A,x\n", None, NonFiniteError, 2),
        ("user_id,type,amount\nu1,A,1\nu3,A,2\n", None, MissingScoreError, 3),
        ("user_id,type,amount\nu1,A,1\n", "user_id,score\nu1,inf\n", NonFiniteError, 2),
        ("user_id,type,amount\nu1,A,1\n", "user_id,score\nu1,1\nu1,2\n", DatasetError, 3),
    ],
)
def test_load_dataset_errors(files, events, scores, error, row):
    paths = files(events) if scores is None else files(events, scores=scores)
    with pytest.raises(error) as exc_info:
        load_dataset(*paths)

    assert exc_info.value.row == row
    assert str(exc_info.value).startswith(f"row {row}: ")


def test_load_dataset_needs_two_users(files):
    paths = files("user_id,type,amount\nu1,A,1\nu1,B,2\n")
    with pytest.raises(DatasetError, match="at least 2 users"):
        load_dataset(*paths)


def test_load_dataset_missing_file(files, tmp_path):
    events, schema, _ = files("user_id,type,amount\nu1,A,1\nu2,A,2\n")
    with pytest.raises(DatasetError, match="Could not read"):
        load_dataset(events, schema, tmp_path / "missing.csv")


def test_write_dataset_round_trip(dataset, tmp_path):
    paths = (tmp_path / "events.csv", tmp_path / "schema.json", tmp_path / "scores.csv")
    write_dataset(dataset, *paths)
    assert load_dataset(*paths) == dataset


def test_load_labels(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text("user_id,label\nu1,1\nu2,0\n")
    assert load_labels(path, ["u2", "u1"]).tolist() == [0, 1]

    with pytest.raises(DatasetError, match="has no label"):
        load_labels(path, ["u3"])

    path.write_text("user_id,label\nu1,yes\n")
    with pytest.raises(DatasetError, match="is not 0 or 1"):
        load_labels(path, ["u1"])


def test_split(dataset):
    train, valid, test = split(dataset, 0.8, 5, seed=1)

    assert (len(train), len(valid), len(test)) == (27, 5, 8)
    ids = train.user_ids + valid.user_ids + test.user_ids
    assert sorted(ids) == sorted(dataset.user_ids)

    position = {user: pos for pos, user in enumerate(dataset.user_ids)}
    for part in (train, valid, test):
        order = [position[user] for user in part.user_ids]
        assert order == sorted(order)
        for user, score in zip(part.user_ids, part.teacher_scores):
            assert dataset.teacher_scores[position[user]] == score

    again = split(dataset, 0.8, 5, seed=1)
    assert [part.user_ids for part in again] == [train.user_ids, valid.user_ids, test.user_ids]
    assert split(dataset, 0.8, 5, seed=2)[0].user_ids != train.user_ids


@pytest.mark.parametrize(
    "train_frac, valid_count, match",
    [
        (0.0, 0, "train_frac must be in"),
        (1.0, 0, "train_frac must be in"),
        (0.8, 32, "leaves no training users"),
        (0.8, -1, "leaves no training users"),
    ],
)
def test_split_errors(dataset, train_frac, valid_count, match):
    with pytest.raises(SplitError, match=match):
        split(dataset, train_frac, valid_count, seed=0)


def test_subset_keeps_table(dataset):
    full = dataset.table
    subset = dataset.subset([3, 0])
    assert "table" in subset.__dict__

    fresh = dataset_module.Table.from_sequences(dataset.schema, subset.sequences)
    assert np.array_equal(subset.table.offsets, fresh.offsets)
    for name, values in fresh.columns.items():
        assert np.array_equal(subset.table.columns[name], values)
    assert full is dataset.table


def test_sample_batch(dataset):
    rng = np.random.default_rng(0)
    batch = sample_batch(dataset, 10, rng)
    assert len(batch) == 10
    assert len(set(batch.tolist())) == 10
    assert batch.tolist() == sorted(batch.tolist())

    assert sample_batch(5, 10, rng).tolist() == [0, 1, 2, 3, 4]

    with pytest.raises(ConfigError, match="at least 2 users to rank, got B=1"):
        sample_batch(dataset, 1, rng)
