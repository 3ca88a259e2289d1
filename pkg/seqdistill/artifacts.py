"""Reading and writing the files a pipeline run leaves in its work directory.

Every artifact starts with its format name and version followed by the
stamp of the active [seqdistill.runtime.context][]. Text and CSV artifacts
carry them as `#` comment lines, JSON artifacts as fields.
"""

import dataclasses
import io
import json
import pathlib
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from seqdistill import constants, runtime
from seqdistill.binarize import LiteralDescriptor, LiteralTable, SourceColumn, ThresholdModel
from seqdistill.dataset import USER_ID, Schema
from seqdistill.exceptions import ArtifactError
from seqdistill.nln import NlnConfig, NlnParams
from seqdistill.operators import (
    StatisticChain,
    column_label,
    format_chain,
    parse_chain,
    parse_column_label,
)
from seqdistill.rules import RuleSet, dump_rules, load_rules

PathLike = Union[str, pathlib.Path]

STATISTICS = "statistics.txt"
VALUES = "statistics_values.csv"
SPLITS = "splits.csv"
THRESHOLDS = "thresholds.json"
LITERALS = "literals.csv"
CHECKPOINT = "checkpoint.json"
RULES = "rules.txt"
REPORT = "report.txt"

SPLIT = "split"
SCORE = "score"
SPLIT_NAMES = ("train", "valid", "test")


def _header(fmt: str) -> List[str]:
    return [f"# {fmt} v{constants.FORMAT_VERSION}", *(f"# {line}" for line in runtime.stamp())]


def _write(path: PathLike, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def write_lines(path: PathLike, fmt: str, lines: Sequence[str]) -> None:
    """Write a text artifact: the header comment lines, then `lines`"""
    _write(path, "\n".join([*_header(fmt), *lines]) + "\n")


def _read_text(path: PathLike) -> str:
    try:
        with open(path, encoding="utf-8") as f:
            return f.read()
    except OSError as exc:
        raise ArtifactError(f'Cannot read artifact "{path}": {exc}') from exc


def _check_format(path: PathLike, first: str, fmt: str) -> None:
    expected = f"{fmt} v{constants.FORMAT_VERSION}"
    if first.lstrip("# ").strip() != expected:
        raise ArtifactError(f'"{path}" is not a {expected} file (found {first.strip()!r})')


def read_lines(path: PathLike, fmt: str) -> List[str]:
    """The body of a text artifact. The header comment lines are dropped."""
    lines = _read_text(path).splitlines()
    if not lines:
        raise ArtifactError(f'Artifact "{path}" is empty')

    _check_format(path, lines[0], fmt)
    pos = 1
    while pos < len(lines) and lines[pos].startswith("#"):
        pos += 1

    return lines[pos:]


def write_frame(path: PathLike, fmt: str, frame: pd.DataFrame) -> None:
    """Write a CSV artifact below the header comment lines"""
    body = frame.to_csv(index=False, lineterminator="\n")
    _write(path, "\n".join(_header(fmt)) + "\n" + body)


def read_frame(path: PathLike, fmt: str) -> pd.DataFrame:
    """A CSV artifact with every cell as text.

    Repeated header labels are kept as they are written. Select such columns by position.
    """
    body = "\n".join(read_lines(path, fmt))
    frame = pd.read_csv(io.StringIO(body), header=None, dtype=str, keep_default_na=False)
    header = pd.Index(frame.iloc[0].tolist(), dtype=object)
    frame = frame.iloc[1:].reset_index(drop=True)
    frame.columns = header
    return frame


def _floats(frame: pd.DataFrame) -> np.ndarray:
    """Parse text cells with Python's round-trip float parser"""
    cells = frame.to_numpy(dtype=object)
    return np.array([[float(c) for c in row] for row in cells], dtype=np.float64).reshape(
        cells.shape
    )


def write_json(path: PathLike, fmt: str, payload: Dict[str, Any]) -> None:
    document = {
        "format": fmt,
        "version": constants.FORMAT_VERSION,
        "stamp": runtime.stamp(),
        **payload,
    }
    _write(path, json.dumps(document, indent=1, ensure_ascii=False) + "\n")


def read_json(path: PathLike, fmt: str) -> Dict[str, Any]:
    try:
        document = json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise ArtifactError(f'"{path}" is not valid JSON: {exc}') from exc

    if not isinstance(document, dict):
        raise ArtifactError(f'"{path}" does not hold a JSON object')
    if document.get("format") != fmt or document.get("version") != constants.FORMAT_VERSION:
        raise ArtifactError(
            f'"{path}" is not a {fmt} v{constants.FORMAT_VERSION} file'
            f' (found {document.get("format")} v{document.get("version")})'
        )

    return document


def write_statistics(
    path: PathLike,
    statistics: Sequence[Tuple[StatisticChain, float]],
    notes: Sequence[Tuple[str, Any]] = (),
) -> None:
    """One `chain<TAB>reward` line per generated statistic, in selection order.

    `notes` are written as `# key=value` comment lines above the statistics.
    """
    lines = [f"# {key}={value}" for key, value in notes]
    lines += [f"{format_chain(chain)}\t{reward!r}" for chain, reward in statistics]
    write_lines(path, constants.STATISTICS_FORMAT, lines)


def read_statistics(path: PathLike, schema: Schema) -> List[Tuple[StatisticChain, float]]:
    statistics = []
    for line in read_lines(path, constants.STATISTICS_FORMAT):
        if not line.strip() or line.startswith("#"):
            continue
        text, _, reward = line.partition("\t")
        statistics.append((parse_chain(text, schema), float(reward) if reward else float("nan")))

    return statistics


def write_values(
    path: PathLike,
    user_ids: Sequence[str],
    chains: Sequence[StatisticChain],
    values: Sequence[np.ndarray],
) -> None:
    """The value matrix of every statistic with one column per output dimension"""
    columns: Dict[str, Any] = {USER_ID: list(user_ids)}
    for chain, matrix in zip(chains, values):
        for dim in range(chain.output_dim):
            columns[column_label(chain, dim)] = np.asarray(matrix)[:, dim]

    write_frame(path, constants.VALUES_FORMAT, pd.DataFrame(columns))


def read_values(
    path: PathLike, schema: Schema
) -> Tuple[List[str], List[StatisticChain], List[np.ndarray]]:
    """The user ids, statistics and value matrices of a values file"""
    frame = read_frame(path, constants.VALUES_FORMAT)
    if not len(frame.columns) or frame.columns[0] != USER_ID:
        raise ArtifactError(f'"{path}" must start with a {USER_ID} column')

    chains: List[StatisticChain] = []
    groups: List[List[int]] = []
    for pos, label in enumerate(frame.columns[1:], start=1):
        chain, _ = parse_column_label(label, schema)
        if not chains or chains[-1] != chain:
            chains.append(chain)
            groups.append([])
        groups[-1].append(pos)

    values = [_floats(frame.iloc[:, positions]) for positions in groups]
    for chain, matrix in zip(chains, values):
        if matrix.shape[1] != chain.output_dim:
            raise ArtifactError(f'"{path}" holds {matrix.shape[1]} columns for {chain}')

    return frame[USER_ID].tolist(), chains, values


def write_splits(
    path: PathLike, user_ids: Sequence[str], splits: Sequence[str], scores: np.ndarray
) -> None:
    """The split and teacher score of every user, in dataset order"""
    frame = pd.DataFrame({USER_ID: list(user_ids), SPLIT: list(splits)})
    frame[SCORE] = np.asarray(scores, dtype=np.float64)
    write_frame(path, constants.SPLITS_FORMAT, frame)


@dataclasses.dataclass(frozen=True, eq=False)
class Splits:
    """The split and teacher score of every user"""

    user_ids: List[str]
    names: np.ndarray
    scores: np.ndarray

    def rows(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.names == split)

    def align(self, user_ids: Sequence[str]) -> np.ndarray:
        """The positions of `user_ids` in these splits"""
        index = {user: pos for pos, user in enumerate(self.user_ids)}
        missing = [user for user in user_ids if user not in index]
        if missing:
            raise ArtifactError(f"{len(missing)} users have no split, e.g. {missing[0]!r}")

        return np.array([index[user] for user in user_ids], dtype=np.int64)


def _check_splits(path: PathLike, names: pd.Series) -> None:
    unknown = set(names) - set(SPLIT_NAMES)
    if unknown:
        raise ArtifactError(f'"{path}" names unknown splits {sorted(unknown)}')


def read_splits(path: PathLike) -> Splits:
    frame = read_frame(path, constants.SPLITS_FORMAT)
    if list(frame.columns) != [USER_ID, SPLIT, SCORE]:
        raise ArtifactError(f'"{path}" must have the header "{USER_ID},{SPLIT},{SCORE}"')

    _check_splits(path, frame[SPLIT])
    return Splits(
        user_ids=frame[USER_ID].tolist(),
        names=frame[SPLIT].to_numpy(dtype=str),
        scores=_floats(frame[[SCORE]])[:, 0],
    )


def _model_payload(model: ThresholdModel) -> List[Dict[str, Any]]:
    return [
        {"statistic": col.label, "binary": col.binary, "thresholds": list(col.thresholds)}
        for col in model.columns
    ]


def _model_from_payload(columns: Sequence[Dict[str, Any]], schema: Schema) -> ThresholdModel:
    try:
        parsed = []
        for entry in columns:
            chain, dim = parse_column_label(entry["statistic"], schema)
            parsed.append(
                SourceColumn(
                    chain=chain,
                    dim=dim,
                    binary=bool(entry["binary"]),
                    thresholds=tuple(float(t) for t in entry["thresholds"]),
                )
            )
    except (KeyError, TypeError) as exc:
        raise ArtifactError(f"Malformed threshold entry: {exc}") from exc

    return ThresholdModel(columns=tuple(parsed))


def write_thresholds(path: PathLike, model: ThresholdModel) -> None:
    write_json(path, constants.THRESHOLDS_FORMAT, {"columns": _model_payload(model)})


def read_thresholds(path: PathLike, schema: Schema) -> ThresholdModel:
    document = read_json(path, constants.THRESHOLDS_FORMAT)
    return _model_from_payload(document.get("columns", []), schema)


def write_literals(
    path: PathLike,
    user_ids: Sequence[str],
    splits: Sequence[str],
    scores: np.ndarray,
    table: LiteralTable,
) -> None:
    """The literal matrix of every user with its split and teacher score"""
    frame = table.to_frame()
    frame.insert(0, SCORE, np.asarray(scores, dtype=np.float64))
    frame.insert(0, SPLIT, list(splits))
    frame.insert(0, USER_ID, list(user_ids))
    write_frame(path, constants.LITERALS_FORMAT, frame)


@dataclasses.dataclass(frozen=True, eq=False)
class Literals(Splits):
    """The contents of a literals file: splits, scores and the literal matrix"""

    table: LiteralTable


def read_literals(path: PathLike, schema: Schema) -> Literals:
    frame = read_frame(path, constants.LITERALS_FORMAT)
    if list(frame.columns[:3]) != [USER_ID, SPLIT, SCORE]:
        raise ArtifactError(f'"{path}" must start with the columns {USER_ID}, {SPLIT}, {SCORE}')

    _check_splits(path, frame[SPLIT])
    descriptors = tuple(LiteralDescriptor.parse(label, schema) for label in frame.columns[3:])
    bits = frame.iloc[:, 3:].to_numpy(dtype=object)
    if not np.isin(bits, ("0", "1")).all():
        raise ArtifactError(f'"{path}" holds literal values other than 0 and 1')

    return Literals(
        user_ids=frame[USER_ID].tolist(),
        names=frame[SPLIT].to_numpy(dtype=str),
        scores=_floats(frame[[SCORE]])[:, 0],
        table=LiteralTable(bits=(bits == "1").astype(np.uint8), descriptors=descriptors),
    )


@dataclasses.dataclass(frozen=True, eq=False)
class Checkpoint:
    """A trained network with everything needed to read rules off it"""

    params: NlnParams
    nln: NlnConfig
    model: ThresholdModel
    descriptors: Tuple[LiteralDescriptor, ...]


def write_checkpoint(path: PathLike, checkpoint: Checkpoint) -> None:
    """Store a checkpoint as JSON. Floats are written with round-trip precision."""
    payload = {
        "config": dataclasses.asdict(checkpoint.nln),
        "thresholds": _model_payload(checkpoint.model),
        "literals": [desc.render() for desc in checkpoint.descriptors],
        "layers": [W.tolist() for W in checkpoint.params.layers],
        "weights": checkpoint.params.weights.tolist(),
    }
    write_json(path, constants.CHECKPOINT_FORMAT, payload)


def read_checkpoint(path: PathLike, schema: Schema) -> Checkpoint:
    document = read_json(path, constants.CHECKPOINT_FORMAT)
    try:
        params = NlnParams(
            layers=[np.asarray(W, dtype=np.float64) for W in document["layers"]],
            weights=np.asarray(document["weights"], dtype=np.float64),
        )
        nln = NlnConfig(**document["config"])
        model = _model_from_payload(document["thresholds"], schema)
        descriptors = tuple(LiteralDescriptor.parse(t, schema) for t in document["literals"])
    except (KeyError, TypeError) as exc:
        raise ArtifactError(f'Malformed checkpoint "{path}": {exc}') from exc

    return Checkpoint(params=params, nln=nln, model=model, descriptors=descriptors)


def write_rules(path: PathLike, ruleset: RuleSet) -> None:
    write_lines(path, constants.RULES_FORMAT, dump_rules(ruleset))


def read_rules(path: PathLike, schema: Schema) -> RuleSet:
    return load_rules(read_lines(path, constants.RULES_FORMAT), schema)


def write_report(path: PathLike, entries: Sequence[Tuple[str, Any]]) -> None:
    """`key: value` lines in the given order"""
    write_lines(path, constants.REPORT_FORMAT, [f"{key}: {value}" for key, value in entries])


def read_report(path: PathLike) -> Dict[str, str]:
    report = {}
    for line in read_lines(path, constants.REPORT_FORMAT):
        key, sep, value = line.partition(": ")
        if sep:
            report[key] = value

    return report
