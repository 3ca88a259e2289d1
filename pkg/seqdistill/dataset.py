"""Event sequences, their column schema and teacher scores"""

import dataclasses
import functools
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from seqdistill import constants
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

logger = logging.getLogger(__name__)

CATEGORICAL = "categorical"
NUMERICAL = "numerical"
USER_ID = "user_id"

PathLike = Union[str, Path]


def _check_name(text: str, what: str) -> None:
    if not isinstance(text, str) or not text:
        raise SchemaError(f"{what} must be a non-empty string, got {text!r}")

    reserved = sorted(set(text) & constants.RESERVED_CHARS)
    if reserved or text != text.strip():
        raise SchemaError(f"{what} {text!r} contains reserved characters {reserved}")


@dataclasses.dataclass(frozen=True)
class Column:
    """One column of the event table.

    Attributes:
        name: The column name.
        kind: `"categorical"` or `"numerical"`.
        vocab: The ordered categories of a categorical column. Empty for
            numerical columns.
    """

    name: str
    kind: str
    vocab: Tuple[str, ...] = ()

    def __post_init__(self):
        _check_name(self.name, "Column name")
        if self.name == USER_ID:
            raise SchemaError(f'Column name "{USER_ID}" is reserved for the user field')

        if self.kind == CATEGORICAL:
            if not self.vocab:
                raise SchemaError(f'Categorical column "{self.name}" has an empty vocab')
            if len(set(self.vocab)) != len(self.vocab):
                raise SchemaError(f'Categorical column "{self.name}" has duplicate categories')
            for category in self.vocab:
                _check_name(category, f'Category of "{self.name}"')
        elif self.kind == NUMERICAL:
            if self.vocab:
                raise SchemaError(f'Numerical column "{self.name}" cannot declare a vocab')
        else:
            raise SchemaError(f'Column "{self.name}" has unknown kind {self.kind!r}')

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    @functools.cached_property
    def codes(self) -> Dict[str, int]:
        return {category: code for code, category in enumerate(self.vocab)}


@dataclasses.dataclass(frozen=True)
class Schema:
    """The ordered columns every event row holds a value for"""

    columns: Tuple[Column, ...]

    def __post_init__(self):
        if not self.columns:
            raise SchemaError("A schema needs at least one column")

        names = [col.name for col in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError(f"Column names must be unique, got {names}")

    @functools.cached_property
    def _by_name(self) -> Dict[str, Column]:
        return {col.name: col for col in self.columns}

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def column(self, name: str) -> Column:
        try:
            return self._by_name[name]
        except KeyError:
            raise SchemaError(f'Unknown column "{name}"') from None

    @property
    def names(self) -> List[str]:
        return [col.name for col in self.columns]

    @property
    def categorical(self) -> List[Column]:
        return [col for col in self.columns if col.is_categorical]

    @property
    def numerical(self) -> List[Column]:
        return [col for col in self.columns if not col.is_categorical]

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Schema":
        try:
            return cls(
                columns=tuple(
                    Column(name=col["name"], kind=col["kind"], vocab=tuple(col.get("vocab", ())))
                    for col in data["columns"]
                )
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"Malformed schema: {exc!r}") from exc

    def to_dict(self) -> Dict[str, Any]:
        columns = []
        for col in self.columns:
            entry: Dict[str, Any] = {"name": col.name, "kind": col.kind}
            if col.is_categorical:
                entry["vocab"] = list(col.vocab)
            columns.append(entry)

        return {"columns": columns}


def load_schema(path: PathLike) -> Schema:
    """Read a JSON schema file of the form `{"columns": [{"name", "kind", "vocab"}]}`"""
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f'Could not read schema file "{path}": {exc}') from exc

    return Schema.from_dict(data)


def write_schema(schema: Schema, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(schema.to_dict(), f, indent=2, ensure_ascii=False)
        f.write("\n")


@dataclasses.dataclass(frozen=True)
class EventSequence:
    """The ordered events of one user.

    Each row holds one value per schema column, in schema order. Categorical
    values are category strings and numerical values are floats.
    """

    user_id: str
    rows: Tuple[Tuple[Union[str, float], ...], ...]

    def __len__(self) -> int:
        return len(self.rows)


@dataclasses.dataclass(frozen=True, eq=False)
class Table:
    """A flat columnar view of many sequences.

    Attributes:
        columns: One array per schema column. Categorical columns hold vocab
            codes, numerical columns hold floats.
        offsets: `offsets[i]:offsets[i + 1]` are the rows of sequence `i`.
    """

    columns: Dict[str, np.ndarray]
    offsets: np.ndarray

    @property
    def n_sequences(self) -> int:
        return len(self.offsets) - 1

    @functools.cached_property
    def segments(self) -> np.ndarray:
        """The sequence index of every row"""
        return np.repeat(np.arange(self.n_sequences), np.diff(self.offsets))

    @classmethod
    def from_sequences(cls, schema: Schema, sequences: Sequence[EventSequence]) -> "Table":
        lengths = np.asarray([len(seq) for seq in sequences], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
        columns = {}
        for pos, col in enumerate(schema.columns):
            values = [row[pos] for seq in sequences for row in seq.rows]
            if col.is_categorical:
                columns[col.name] = np.fromiter(
                    (col.codes[v] for v in values), dtype=np.int64, count=len(values)
                )
            else:
                columns[col.name] = np.asarray(values, dtype=np.float64).reshape(-1)

        return cls(columns=columns, offsets=offsets)

    def take(self, indices: Sequence[int]) -> "Table":
        """The table of the sequences at `indices`, in that order"""
        indices = np.asarray(indices, dtype=np.int64)
        lengths = np.diff(self.offsets)[indices]
        offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
        rows = np.repeat(self.offsets[indices] - offsets[:-1], lengths) + np.arange(offsets[-1])
        columns = {name: arr[rows] for name, arr in self.columns.items()}
        return Table(columns=columns, offsets=offsets)


@dataclasses.dataclass(frozen=True)
class Dataset:
    """Sequences with one teacher score each.

    Attributes:
        schema: The column schema.
        sequences: One sequence per user.
        teacher_scores: The teacher's score of every sequence, aligned with `sequences`.
    """

    schema: Schema
    sequences: Tuple[EventSequence, ...]
    teacher_scores: Tuple[float, ...]

    def __post_init__(self):
        if len(self.sequences) != len(self.teacher_scores):
            raise DatasetError(
                f"{len(self.sequences)} sequences but {len(self.teacher_scores)} scores"
            )

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def user_ids(self) -> List[str]:
        return [seq.user_id for seq in self.sequences]

    @functools.cached_property
    def scores(self) -> np.ndarray:
        scores = np.asarray(self.teacher_scores, dtype=np.float64).reshape(-1)
        scores.flags.writeable = False
        return scores

    @functools.cached_property
    def table(self) -> Table:
        return Table.from_sequences(self.schema, self.sequences)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        """The dataset of the users at `indices`, in that order"""
        indices = [int(i) for i in indices]
        subset = Dataset(
            schema=self.schema,
            sequences=tuple(self.sequences[i] for i in indices),
            teacher_scores=tuple(self.teacher_scores[i] for i in indices),
        )
        if "table" in self.__dict__:
            subset.__dict__["table"] = self.table.take(indices)

        return subset


def _line(pos: int) -> int:
    """The 1-based file line of a data row. The header is line 1."""
    return pos + 2


def _parse_floats(values: np.ndarray, what: str) -> np.ndarray:
    """Convert text to floats, rejecting anything unparsable or non-finite"""
    parsed = np.empty(len(values), dtype=np.float64)
    for pos, text in enumerate(values):
        try:
            parsed[pos] = float(text)
        except ValueError:
            raise NonFiniteError(f"{what} {text!r} is not a number", row=_line(pos)) from None

    bad = np.flatnonzero(~np.isfinite(parsed))
    if len(bad):
        pos = int(bad[0])
        raise NonFiniteError(f"{what} {values[pos]!r} is not finite", row=_line(pos))

    return parsed


def _read_csv(path: PathLike) -> pd.DataFrame:
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DatasetError(f'Could not read "{path}": {exc}') from exc


def _read_scores(path: PathLike) -> Dict[str, float]:
    frame = _read_csv(path)
    if list(frame.columns) != [USER_ID, "score"]:
        raise DatasetError(f'Scores file "{path}" must have the header "{USER_ID},score"')

    users = frame[USER_ID].to_numpy()
    duplicated = frame[USER_ID].duplicated().to_numpy()
    if duplicated.any():
        pos = int(np.flatnonzero(duplicated)[0])
        raise DatasetError(f"Duplicate score for user {users[pos]!r}", row=_line(pos))

    scores = _parse_floats(frame["score"].to_numpy(), "Score")
    return dict(zip(users.tolist(), scores.tolist()))


def load_dataset(events_path: PathLike, schema_path: PathLike, scores_path: PathLike) -> Dataset:
    """Load a dataset from an events file, a schema file and a scores file.

    The events file is a UTF-8 CSV with a header. It has a `user_id` field and
    one field per schema column. Rows of the same user form that user's sequence
    in file order. The scores file is a CSV with the header `user_id,score`.
    Scores for users without events are ignored.

    Raises:
        UnknownColumnError: The events header names a column the schema lacks.
        VocabularyError: A categorical value outside its column's vocab.
        NonFiniteError: A numerical value or score that is not a finite number.
        MissingScoreError: A user with events has no score.
    """
    schema = load_schema(schema_path)
    frame = _read_csv(events_path)

    header = list(frame.columns)
    for name in header:
        if name != USER_ID and name not in schema:
            raise UnknownColumnError(f'Unknown column "{name}" in events header', row=1)

    missing = [name for name in [USER_ID, *schema.names] if name not in header]
    if missing:
        raise DatasetError(f"Events file is missing columns {missing}", row=1)

    values: List[np.ndarray] = []
    for col in schema.columns:
        raw = frame[col.name].to_numpy()
        if col.is_categorical:
            known = frame[col.name].isin(col.vocab).to_numpy()
            if not known.all():
                pos = int(np.flatnonzero(~known)[0])
                raise VocabularyError(
                    f'Value {raw[pos]!r} is not in the vocab of column "{col.name}"',
                    row=_line(pos),
                )
            values.append(raw)
        else:
            values.append(_parse_floats(raw, f'Value of "{col.name}"'))

    scores = _read_scores(scores_path)
    users = frame[USER_ID].to_numpy()

    groups = frame.groupby(USER_ID, sort=False).indices
    sequences = []
    teacher_scores = []
    for user in pd.unique(frame[USER_ID]):
        if user not in scores:
            pos = int(groups[user][0])
            raise MissingScoreError(f"User {user!r} has no score", row=_line(pos))

        positions = groups[user]
        rows = tuple(
            tuple(
                str(col_values[pos]) if col.is_categorical else float(col_values[pos])
                for col, col_values in zip(schema.columns, values)
            )
            for pos in positions
        )
        sequences.append(EventSequence(user_id=str(users[positions[0]]), rows=rows))
        teacher_scores.append(scores[user])

    if len(sequences) < 2:
        raise DatasetError(f"A dataset needs at least 2 users, got {len(sequences)}")

    logger.info("Loaded %d sequences with %d events", len(sequences), len(frame))
    return Dataset(schema=schema, sequences=tuple(sequences), teacher_scores=tuple(teacher_scores))


def write_dataset(
    d: Dataset, events_path: PathLike, schema_path: PathLike, scores_path: PathLike
) -> None:
    """Write a dataset in the format [seqdistill.dataset.load_dataset][] reads.

    Floats are written with their shortest round-trip representation.
    """
    write_schema(d.schema, schema_path)

    records = [(seq.user_id, *row) for seq in d.sequences for row in seq.rows]
    events = pd.DataFrame.from_records(records, columns=[USER_ID, *d.schema.names])
    events.to_csv(events_path, index=False, encoding="utf-8", lineterminator="\n")

    scores = pd.DataFrame({USER_ID: d.user_ids, "score": d.scores})
    scores.to_csv(scores_path, index=False, encoding="utf-8", lineterminator="\n")


def load_labels(path: PathLike, user_ids: Sequence[str]) -> np.ndarray:
    """Binary labels for `user_ids` from a `user_id,label` CSV file"""
    frame = _read_csv(path)
    if list(frame.columns) != [USER_ID, "label"]:
        raise DatasetError(f'Labels file "{path}" must have the header "{USER_ID},label"')

    labels = dict(zip(frame[USER_ID].tolist(), frame["label"].tolist()))
    result = np.empty(len(user_ids), dtype=np.int64)
    for pos, user in enumerate(user_ids):
        if user not in labels:
            raise DatasetError(f'User {user!r} has no label in "{path}"')
        if labels[user] not in ("0", "1"):
            raise DatasetError(f"Label {labels[user]!r} of user {user!r} is not 0 or 1")
        result[pos] = int(labels[user])

    return result


def split(
    d: Dataset, train_frac: float, valid_count: int, seed: int
) -> Tuple[Dataset, Dataset, Dataset]:
    """Partition a dataset into train, validation and test splits.

    `floor(train_frac * N)` users form the training portion, of which
    `valid_count` are held out for validation. The rest is the test split.
    Users are assigned by a seeded permutation and every split keeps the
    original user order.

    Raises:
        SplitError: When the sizes leave the train or test split empty.
    """
    n = len(d)
    if not 0 < train_frac < 1:
        raise SplitError(f"train_frac must be in (0, 1), got {train_frac}")

    n_total = math.floor(train_frac * n)
    if valid_count < 0 or valid_count >= n_total:
        raise SplitError(
            f"valid_count={valid_count} leaves no training users out of {n_total} (N={n})"
        )
    if n_total >= n:
        raise SplitError(f"train_frac={train_frac} leaves no test users (N={n})")

    order = np.random.default_rng(seed).permutation(n)
    n_train = n_total - valid_count
    parts = (order[:n_train], order[n_train:n_total], order[n_total:])
    return tuple(d.subset(np.sort(part)) for part in parts)  # type: ignore[return-value]


def sample_batch(d: Union[Dataset, int], B: int, rng: np.random.Generator) -> np.ndarray:
    """A uniform batch of `min(B, N)` distinct indices, sorted ascending"""
    if B < 2:
        raise ConfigError(f"A batch needs at least 2 users to rank, got B={B}")

    n = d if isinstance(d, int) else len(d)
    return np.sort(rng.choice(n, size=min(B, n), replace=False))
