"""Thresholding statistic values into boolean literals"""

import dataclasses
import logging
import warnings
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from seqdistill import constants
from seqdistill.dataset import Dataset, Schema
from seqdistill.exceptions import ChainParseError, ShapeError
from seqdistill.operators import (
    StatisticChain,
    column_label,
    evaluate_column,
    parse_column_label,
)
from seqdistill.utils import format_float

logger = logging.getLogger(__name__)

COMPARISON = " > "


@dataclasses.dataclass(frozen=True)
class LiteralDescriptor:
    """What one literal column tests.

    Attributes:
        chain: The statistic the literal thresholds.
        dim: The output dimension of the statistic.
        threshold: The literal fires when the value is strictly greater.
            `None` marks a binary statistic passed through as is, which fires
            when the value is greater than 0.
    """

    chain: StatisticChain
    dim: int = 0
    threshold: Optional[float] = None

    @property
    def label(self) -> str:
        return column_label(self.chain, self.dim)

    def render(self) -> str:
        if self.threshold is None:
            return self.label

        return f"{self.label}{COMPARISON}{format_float(self.threshold)}"

    def __str__(self) -> str:
        return self.render()

    @classmethod
    def parse(cls, text: str, schema: Schema) -> "LiteralDescriptor":
        label, sep, threshold = text.strip().rpartition(COMPARISON)
        if not sep:
            chain, dim = parse_column_label(text, schema)
            return cls(chain=chain, dim=dim)

        chain, dim = parse_column_label(label, schema)
        try:
            value = float(threshold)
        except ValueError:
            raise ChainParseError(
                f'Invalid threshold "{threshold}"',
                text=text,
                position=len(label) + len(COMPARISON),
            ) from None

        return cls(chain=chain, dim=dim, threshold=value)

    def fires(self, values: np.ndarray) -> np.ndarray:
        """The literal's bits for a vector of statistic values"""
        return values > (0.0 if self.threshold is None else self.threshold)

    def evaluate(self, dataset: Dataset, indices: Optional[Sequence[int]] = None) -> np.ndarray:
        """The literal's bits on a dataset, computed from the statistic itself"""
        return self.fires(evaluate_column(self.chain, dataset, indices)[:, self.dim])


@dataclasses.dataclass(frozen=True)
class SourceColumn:
    """One statistic dimension and the thresholds fitted for it"""

    chain: StatisticChain
    dim: int
    binary: bool
    thresholds: Tuple[float, ...] = ()

    @property
    def label(self) -> str:
        return column_label(self.chain, self.dim)

    @property
    def descriptors(self) -> List[LiteralDescriptor]:
        if self.binary:
            return [LiteralDescriptor(self.chain, self.dim)]

        return [LiteralDescriptor(self.chain, self.dim, t) for t in self.thresholds]


@dataclasses.dataclass(frozen=True)
class ThresholdModel:
    """Per-column thresholds fitted on the training split"""

    columns: Tuple[SourceColumn, ...]

    @property
    def descriptors(self) -> List[LiteralDescriptor]:
        return [desc for col in self.columns for desc in col.descriptors]

    @property
    def n_literals(self) -> int:
        return sum(1 if col.binary else len(col.thresholds) for col in self.columns)


@dataclasses.dataclass(frozen=True, eq=False)
class LiteralTable:
    """A boolean matrix with one column per literal"""

    bits: np.ndarray
    descriptors: Tuple[LiteralDescriptor, ...]

    def __post_init__(self):
        if self.bits.ndim != 2 or self.bits.shape[1] != len(self.descriptors):
            raise ShapeError(
                f"{self.bits.shape} literal matrix for {len(self.descriptors)} descriptors"
            )

    def __len__(self) -> int:
        return self.bits.shape[0]

    def to_frame(self) -> pd.DataFrame:
        """The literal matrix with the rendered descriptors as header"""
        return pd.DataFrame(self.bits, columns=[desc.render() for desc in self.descriptors])

    def duplicate_columns(self) -> List[List[int]]:
        """Groups of literal columns with identical bits"""
        groups: Dict[bytes, List[int]] = {}
        for pos in range(self.bits.shape[1]):
            groups.setdefault(np.ascontiguousarray(self.bits[:, pos]).tobytes(), []).append(pos)

        return [group for group in groups.values() if len(group) > 1]


def source_columns(
    chains: Sequence[StatisticChain], values: Sequence[np.ndarray]
) -> Tuple[List[Tuple[StatisticChain, int]], np.ndarray]:
    """Flatten statistic value matrices into one column per output dimension.

    Returns:
        The `(chain, dim)` of every column and the stacked value matrix.
    """
    if len(chains) != len(values):
        raise ShapeError(f"{len(chains)} statistics but {len(values)} value matrices")

    sources = [(chain, dim) for chain in chains for dim in range(chain.output_dim)]
    if not values:
        return sources, np.zeros((0, 0))

    matrix = np.hstack([np.asarray(v, dtype=np.float64).reshape(len(v), -1) for v in values])
    if matrix.shape[1] != len(sources):
        raise ShapeError(f"{matrix.shape[1]} value columns for {len(sources)} dimensions")

    return sources, matrix


def fit_thresholds(
    values: np.ndarray, sources: Sequence[Tuple[StatisticChain, int]]
) -> ThresholdModel:
    """Fit the literal thresholds of every column on training values.

    A column whose values are all 0 or 1 passes through as a single literal.
    Every other column gets thresholds at the 0th, 10th, ..., 100th percentiles.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != len(sources) or values.shape[0] == 0:
        raise ShapeError(f"Cannot fit {len(sources)} columns on values of shape {values.shape}")

    columns = []
    for pos, (chain, dim) in enumerate(sources):
        col = values[:, pos]
        if np.isin(col, (0.0, 1.0)).all():
            columns.append(SourceColumn(chain=chain, dim=dim, binary=True))
        else:
            thresholds = np.percentile(col, constants.BINARIZE_PERCENTILES, method="linear")
            columns.append(
                SourceColumn(
                    chain=chain,
                    dim=dim,
                    binary=False,
                    thresholds=tuple(float(t) for t in thresholds),
                )
            )

    return ThresholdModel(columns=tuple(columns))


def transform(values: np.ndarray, model: ThresholdModel) -> LiteralTable:
    """Threshold values of any split with a fitted model. Comparisons are strict."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != len(model.columns):
        raise ShapeError(
            f"Values of shape {values.shape} do not match {len(model.columns)} fitted columns"
        )

    blocks = []
    for pos, col in enumerate(model.columns):
        x = values[:, pos : pos + 1]
        if col.binary:
            blocks.append(x > 0)
        else:
            blocks.append(x > np.asarray(col.thresholds)[None, :])

    bits = (
        np.hstack(blocks).astype(np.uint8)
        if blocks
        else np.zeros((values.shape[0], 0), dtype=np.uint8)
    )
    return LiteralTable(bits=bits, descriptors=tuple(model.descriptors))


def fit_transform(
    values: np.ndarray, sources: Sequence[Tuple[StatisticChain, int]]
) -> Tuple[ThresholdModel, LiteralTable]:
    """Fit thresholds on training values and transform them, warning about duplicate literals"""
    model = fit_thresholds(values, sources)
    table = transform(values, model)

    duplicates = table.duplicate_columns()
    if duplicates:
        warnings.warn(
            f"{len(duplicates)} groups of literals have identical training bits",
            stacklevel=2,
        )
        for group in duplicates:
            text = " = ".join(table.descriptors[pos].render() for pos in group)
            logger.debug("Identical literals: %s", text)

    logger.info(
        "Binarized %d statistic columns into %d literals", len(model.columns), model.n_literals
    )
    return model, table


def augment(row: np.ndarray) -> np.ndarray:
    """The network input of one literal row: `[z, 1 - z, 1, 0]`"""
    row = np.asarray(row, dtype=np.float64).reshape(-1)
    return np.concatenate([row, 1.0 - row, [1.0, 0.0]])


def augment_matrix(bits: np.ndarray) -> np.ndarray:
    """Row-wise [seqdistill.binarize.augment][] of a literal matrix"""
    bits = np.asarray(bits, dtype=np.float64)
    n = bits.shape[0]
    return np.hstack([bits, 1.0 - bits, np.ones((n, 1)), np.zeros((n, 1))])
