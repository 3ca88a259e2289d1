"""The operator algebra, statistic validity and the statistic evaluator.

A statistic is a chain of operators `T_d ∘ ... ∘ T_1`. `T_1` selects the
target column, the last operator aggregates it, and the operators between
filter, reorder or transform the rows of the working table.
"""

import dataclasses
import re
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from seqdistill import config, constants
from seqdistill.dataset import Dataset, EventSequence, Schema, Table
from seqdistill.exceptions import ChainParseError

SEPARATOR = "∘"


class Operator:
    """Base class of every operator"""

    name: str = ""

    def render(self) -> str:
        return self.name


@dataclasses.dataclass(frozen=True)
class Select(Operator):
    """Sets the target column. Categorical targets are one-hot expanded."""

    column: str
    name = "Select"

    def render(self) -> str:
        return f"Select[{self.column}]"


@dataclasses.dataclass(frozen=True)
class Aggregate(Operator):
    """Reduces the target column to one value per sequence, group or dimension"""

    func: str
    k: Optional[int] = None

    @property
    def name(self) -> str:  # type: ignore[override]
        return self.func

    def render(self) -> str:
        return self.func if self.k is None else f"{self.func}[{self.k}]"


@dataclasses.dataclass(frozen=True)
class GroupBy(Operator):
    """Partitions rows by every category of a categorical column"""

    column: str
    name = "GroupBy"

    def render(self) -> str:
        return f"GroupBy[{self.column}]"


@dataclasses.dataclass(frozen=True)
class FilterBy(Operator):
    """Removes the rows holding a category"""

    column: str
    category: str
    name = "FilterBy"

    def render(self) -> str:
        return f"FilterBy[{self.column}={self.category}]"


@dataclasses.dataclass(frozen=True)
class RetainBy(Operator):
    """Keeps only the rows holding a category"""

    column: str
    category: str
    name = "RetainBy"

    def render(self) -> str:
        return f"RetainBy[{self.column}={self.category}]"


@dataclasses.dataclass(frozen=True)
class SortBy(Operator):
    """Stably reorders rows by the raw values of a numerical column"""

    column: str
    descending: bool = False
    name = "SortBy"

    def render(self) -> str:
        return f"SortBy[{self.column},{'desc' if self.descending else 'asc'}]"


@dataclasses.dataclass(frozen=True)
class Top5(Operator):
    """Keeps the first five rows"""

    name = "Top5"


@dataclasses.dataclass(frozen=True)
class Abs(Operator):
    """Maps numerical target values through their absolute value"""

    name = "Abs"


MEAN = Aggregate("Mean")
MAX = Aggregate("Max")
MIN = Aggregate("Min")
SUM = Aggregate("Sum")
STD = Aggregate("Std")
PTP = Aggregate("Ptp")
COUNT = Aggregate("Count")
FIRST = Aggregate("First")
TOP5 = Top5()
ABS = Abs()

AGGREGATIONS = (MEAN, MAX, MIN, SUM, STD, PTP, COUNT, FIRST) + tuple(
    Aggregate("Percentile", k) for k in constants.OPERATOR_PERCENTILES
)

_PLAIN = {op.render(): op for op in AGGREGATIONS if op.k is None}
_PLAIN.update({"Top5": TOP5, "Abs": ABS})
_NAMES = [*_PLAIN, "Percentile", "Select", "GroupBy", "FilterBy", "RetainBy", "SortBy"]


def percentile(k: int) -> Aggregate:
    if k not in constants.OPERATOR_PERCENTILES:
        raise ValueError(f"Percentile must be one of {constants.OPERATOR_PERCENTILES}, got {k}")

    return Aggregate("Percentile", k)


def universe(schema: Schema) -> List[Operator]:
    """Every operator over a schema in canonical order.

    Canonical order breaks every tie in the search: selections in schema
    order, aggregations, group-bys, filters, retains, sorts, then `Top5`
    and `Abs`.
    """
    ops: List[Operator] = [Select(col.name) for col in schema.columns]
    ops.extend(AGGREGATIONS)
    ops.extend(GroupBy(col.name) for col in schema.categorical)
    ops.extend(FilterBy(col.name, cat) for col in schema.categorical for cat in col.vocab)
    ops.extend(RetainBy(col.name, cat) for col in schema.categorical for cat in col.vocab)
    ops.extend(
        SortBy(col.name, descending) for col in schema.numerical for descending in (False, True)
    )
    ops.extend([TOP5, ABS])
    return ops


@dataclasses.dataclass(frozen=True)
class StatisticChain:
    """An ordered composition of operators.

    `ops[0]` is applied first. Two chains are equal when their operators are,
    regardless of the schema they were built against.
    """

    ops: Tuple[Operator, ...]
    schema: Schema = dataclasses.field(compare=False, hash=False, repr=False)

    def __len__(self) -> int:
        return len(self.ops)

    def __str__(self) -> str:
        return format_chain(self)

    def extend(self, op: Operator) -> "StatisticChain":
        return StatisticChain(self.ops + (op,), self.schema)

    @property
    def depth(self) -> int:
        return len(self.ops)

    @property
    def is_terminal(self) -> bool:
        return bool(self.ops) and isinstance(self.ops[-1], Aggregate)

    @property
    def target(self) -> str:
        return self.ops[0].column  # type: ignore[attr-defined]

    @property
    def target_kind(self) -> str:
        return self.schema.column(self.target).kind

    @property
    def group_by(self) -> Optional[GroupBy]:
        return next((op for op in self.ops if isinstance(op, GroupBy)), None)

    @property
    def dimension_labels(self) -> Optional[Tuple[str, ...]]:
        """The category of every output dimension, or `None` for scalar statistics"""
        target = self.schema.column(self.target)
        if target.is_categorical:
            return target.vocab

        group_by = self.group_by
        if group_by is not None:
            return self.schema.column(group_by.column).vocab

        return None

    @property
    def output_dim(self) -> int:
        labels = self.dimension_labels
        return 1 if labels is None else len(labels)

    @property
    def is_scalar(self) -> bool:
        return self.dimension_labels is None


def column_label(chain: StatisticChain, dim: int = 0) -> str:
    """A name for one output dimension of a statistic.

    Scalar statistics are named by their DSL text. One-hot dimensions name the
    category inside the selection, as in `Sum∘Select[type=A]`, and grouped
    dimensions append the group's category, as in `Mean∘GroupBy[type]∘Select[amount][A]`.
    """
    labels = chain.dimension_labels
    if labels is None:
        return format_chain(chain)

    if chain.schema.column(chain.target).is_categorical:
        rendered = [op.render() for op in chain.ops]
        rendered[0] = f"Select[{chain.target}={labels[dim]}]"
        return SEPARATOR.join(reversed(rendered))

    return f"{format_chain(chain)}[{labels[dim]}]"


def format_chain(chain: StatisticChain) -> str:
    """Render a chain in the statistic DSL, outermost operator first"""
    return SEPARATOR.join(op.render() for op in reversed(chain.ops))


class _Parser:
    """Recursive descent over the statistic DSL"""

    _name = re.compile("|".join(sorted(_NAMES, key=len, reverse=True)))

    def __init__(self, text: str, schema: Schema):
        self.text = text
        self.schema = schema
        self.pos = 0
        self.dim: Optional[str] = None

    def error(self, message: str, pos: Optional[int] = None) -> ChainParseError:
        return ChainParseError(message, text=self.text, position=self.pos if pos is None else pos)

    def skip_space(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos] == " ":
            self.pos += 1

    def brackets(self) -> Tuple[str, int]:
        if self.pos >= len(self.text) or self.text[self.pos] != "[":
            raise self.error('Expected "["')

        start = self.pos + 1
        end = self.text.find("]", start)
        if end < 0:
            raise self.error('Unclosed "["')

        self.pos = end + 1
        return self.text[start:end], start

    def column(self, name: str, pos: int) -> str:
        if name not in self.schema:
            raise self.error(f'Unknown column "{name}"', pos)

        return name

    def category(self, column: str, category: str, pos: int) -> str:
        col = self.schema.column(column)
        if category not in col.vocab:
            raise self.error(f'Unknown category "{category}" of column "{column}"', pos)

        return category

    def pair(self, body: str, pos: int) -> Tuple[str, str]:
        column, sep, category = body.partition("=")
        if not sep:
            raise self.error(f'Expected "column=category", got "{body}"', pos)

        column = self.column(column, pos)
        if not self.schema.column(column).is_categorical:
            raise self.error(f'Column "{column}" is not categorical', pos)

        return column, self.category(column, category, pos + len(column) + 1)

    def operator(self) -> Operator:
        start = self.pos
        match = self._name.match(self.text, self.pos)
        if not match:
            raise self.error("Expected an operator")

        name = match.group()
        self.pos = match.end()
        if name in _PLAIN:
            return _PLAIN[name]
        elif name == "Percentile":
            body, pos = self.brackets()
            if not body.isdigit() or int(body) not in constants.OPERATOR_PERCENTILES:
                raise self.error(f'Unsupported percentile "{body}"', pos)
            return Aggregate("Percentile", int(body))
        elif name == "Select":
            body, pos = self.brackets()
            column, sep, category = body.partition("=")
            if sep:
                column, category = self.pair(body, pos)
                self.dim = category
            return Select(self.column(column, pos))
        elif name == "GroupBy":
            body, pos = self.brackets()
            return GroupBy(self.column(body, pos))
        elif name in ("FilterBy", "RetainBy"):
            body, pos = self.brackets()
            column, category = self.pair(body, pos)
            return FilterBy(column, category) if name == "FilterBy" else RetainBy(column, category)
        elif name == "SortBy":
            body, pos = self.brackets()
            column, _, direction = body.partition(",")
            if direction not in ("asc", "desc"):
                raise self.error(f'Expected "asc" or "desc", got "{direction}"', pos)
            return SortBy(self.column(column, pos), direction == "desc")

        raise self.error(f'Unknown operator "{name}"', start)

    def chain(self) -> Tuple[Operator, ...]:
        rendered = [self.operator()]
        while True:
            self.skip_space()
            if self.text.startswith(SEPARATOR, self.pos) or self.text.startswith("o", self.pos):
                self.pos += 1
                self.skip_space()
                rendered.append(self.operator())
            else:
                break

        return tuple(reversed(rendered))


def parse_chain(text: str, schema: Schema) -> StatisticChain:
    """Parse the statistic DSL.

    Operators are separated by `∘` or the ASCII alias `o`. The result is not
    checked for validity, so `Sum∘Sum∘Select[money]` parses into a chain that
    [seqdistill.operators.is_valid][] rejects.

    Raises:
        ChainParseError: Malformed text, unknown columns or unknown categories.
    """
    parser = _Parser(text.strip(), schema)
    ops = parser.chain()
    if parser.pos != len(parser.text):
        raise parser.error("Unexpected trailing text")
    if parser.dim is not None:
        raise parser.error("A statistic cannot select a single category", 0)

    return StatisticChain(ops, schema)


def parse_column_label(text: str, schema: Schema) -> Tuple[StatisticChain, int]:
    """Parse a name produced by [seqdistill.operators.column_label][].

    Returns:
        The statistic and the output dimension the label names.
    """
    parser = _Parser(text.strip(), schema)
    ops = parser.chain()
    chain = StatisticChain(ops, schema)
    if not isinstance(ops[0], Select) or any(isinstance(op, Select) for op in ops[1:]):
        raise parser.error("A statistic has exactly one selection, applied first", 0)

    target = schema.column(chain.target)
    if parser.dim is not None:
        dim = target.vocab.index(parser.dim)
    elif parser.pos < len(parser.text):
        body, pos = parser.brackets()
        group_by = chain.group_by
        if group_by is None:
            raise parser.error("Only grouped statistics name a category suffix", pos - 1)
        dim = schema.column(group_by.column).vocab.index(
            parser.category(group_by.column, body, pos)
        )
    elif target.is_categorical or chain.group_by is not None:
        raise parser.error("Expected the category of a vector statistic")
    else:
        dim = 0

    if parser.pos != len(parser.text):
        raise parser.error("Unexpected trailing text")

    return chain, dim


def _can_append(schema: Schema, D: int, ops: Sequence[Operator], op: Operator) -> bool:
    """True if `ops + [op]` is a prefix of some valid chain within depth D.

    `ops` must already be such a prefix.
    """
    n = len(ops) + 1
    if n > D or (n == D and not isinstance(op, Aggregate)):
        return False

    if not ops:
        return isinstance(op, Select) and op.column in schema

    last = ops[-1]
    if isinstance(last, Aggregate):
        return False
    if isinstance(last, GroupBy) and not isinstance(op, Aggregate):
        return False
    if isinstance(op, Select) or op in ops:
        return False

    target = schema.column(ops[0].column)  # type: ignore[attr-defined]
    if isinstance(op, Aggregate):
        return op.k is None or op.k in constants.OPERATOR_PERCENTILES
    elif isinstance(op, Abs):
        return not target.is_categorical
    elif isinstance(op, GroupBy):
        return (
            not target.is_categorical
            and op.column in schema
            and schema.column(op.column).is_categorical
        )
    elif isinstance(op, (FilterBy, RetainBy)):
        return (
            op.column in schema
            and schema.column(op.column).is_categorical
            and op.category in schema.column(op.column).vocab
        )
    elif isinstance(op, SortBy):
        return op.column in schema and not schema.column(op.column).is_categorical
    elif isinstance(op, Top5):
        return True

    raise AssertionError(f"Unhandled operator {op!r}")


def prefix_ok(schema: Schema, D: int, ops: Sequence[Operator]) -> bool:
    """True if `ops` can be completed into a valid chain within depth D, ignoring exclusions"""
    return all(_can_append(schema, D, ops[:i], op) for i, op in enumerate(ops))


def is_valid(chain: StatisticChain, D: Optional[int] = None) -> bool:
    """True if the chain denotes a statistic within depth D.

    A valid chain starts with one `Select`, ends with its only aggregation and
    holds no operator twice. The last rule is stricter than banning a repeated
    `FilterBy` alone: `Abs∘Abs` or the same `SortBy` twice are invalid too.

    Args:
        chain: The chain to check.
        D: The depth bound. Defaults to [seqdistill.config.search_depth][].
    """
    D = config.search_depth() if D is None else D
    return (
        len(chain.ops) >= 2
        and chain.is_terminal
        and prefix_ok(chain.schema, D, chain.ops)
    )


class Grammar:
    """The valid statistics of one schema and depth bound, minus an excluded set.

    Results of [seqdistill.operators.Grammar.valid_next][] are memoized, so one
    grammar should serve a whole search.
    """

    def __init__(self, schema: Schema, D: int, excluded: Iterable[StatisticChain] = ()):
        self.schema = schema
        self.D = D
        self.excluded: FrozenSet[Tuple[Operator, ...]] = frozenset(c.ops for c in excluded)
        self.universe = universe(schema)
        self._next: Dict[Tuple[Operator, ...], Tuple[Operator, ...]] = {}

    def structural_next(self, ops: Tuple[Operator, ...]) -> List[Operator]:
        return [op for op in self.universe if _can_append(self.schema, self.D, ops, op)]

    def valid_next(self, ops: Tuple[Operator, ...]) -> Tuple[Operator, ...]:
        """The operators that extend `ops` towards a valid, non-excluded statistic"""
        if ops not in self._next:
            self._next[ops] = tuple(
                op for op in self.structural_next(ops) if self.completable(ops + (op,))
            )

        return self._next[ops]

    def completable(self, ops: Tuple[Operator, ...]) -> bool:
        if ops and isinstance(ops[-1], Aggregate):
            return len(ops) >= 2 and ops not in self.excluded

        return bool(self.valid_next(ops))


def valid_next_operators(
    prefix: StatisticChain, D: int, excluded: Iterable[StatisticChain] = ()
) -> List[Operator]:
    """The operators that extend a prefix towards a valid statistic not in `excluded`.

    Returns:
        The operators in canonical order. Empty when the prefix is terminal.
    """
    return list(Grammar(prefix.schema, D, excluded).valid_next(prefix.ops))


def _segment_starts(segments: np.ndarray, n_keys: int) -> Tuple[np.ndarray, np.ndarray]:
    counts = np.bincount(segments, minlength=n_keys)
    return counts, np.cumsum(counts) - counts


def _order_stat(values, keys, n_keys, picker):
    counts, starts = _segment_starts(keys, n_keys)
    order = np.lexsort((values, keys))
    ordered = values[order]
    result = np.zeros(n_keys, dtype=np.float64)
    present = counts > 0
    result[present] = picker(ordered, starts[present], counts[present])
    return result


def _percentile_picker(k: int):
    def pick(ordered, starts, counts):
        h = (counts - 1) * (k / 100)
        lo = np.floor(h).astype(np.int64)
        hi = np.minimum(lo + 1, counts - 1)
        frac = h - lo
        low, high = ordered[starts + lo], ordered[starts + hi]
        return low + frac * (high - low)

    return pick


def _reduce(agg: Aggregate, values: np.ndarray, keys: np.ndarray, n_keys: int) -> np.ndarray:
    """Reduce `values` per key. Keys without rows reduce to 0."""
    if agg.func == "Count":
        return np.bincount(keys, minlength=n_keys).astype(np.float64)
    elif agg.func == "Sum":
        return np.bincount(keys, weights=values, minlength=n_keys)
    elif agg.func in ("Mean", "Std"):
        counts = np.bincount(keys, minlength=n_keys)
        sums = np.bincount(keys, weights=values, minlength=n_keys)
        means = np.divide(sums, counts, out=np.zeros(n_keys), where=counts > 0)
        if agg.func == "Mean":
            return means
        squares = np.bincount(keys, weights=(values - means[keys]) ** 2, minlength=n_keys)
        return np.sqrt(np.divide(squares, counts, out=np.zeros(n_keys), where=counts > 0))
    elif agg.func == "First":
        result = np.zeros(n_keys, dtype=np.float64)
        present, first = np.unique(keys, return_index=True)
        result[present] = values[first]
        return result
    elif agg.func == "Min":
        return _order_stat(values, keys, n_keys, lambda v, s, c: v[s])
    elif agg.func == "Max":
        return _order_stat(values, keys, n_keys, lambda v, s, c: v[s + c - 1])
    elif agg.func == "Ptp":
        return _order_stat(values, keys, n_keys, lambda v, s, c: v[s + c - 1] - v[s])
    elif agg.func == "Percentile":
        return _order_stat(values, keys, n_keys, _percentile_picker(agg.k))  # type: ignore

    raise AssertionError(f"Unhandled aggregation {agg!r}")


def evaluate_table(chain: StatisticChain, schema: Schema, table: Table) -> np.ndarray:
    """Evaluate a valid chain on every sequence of a table.

    Returns:
        A matrix with one row per sequence and `chain.output_dim` columns.
    """
    n = table.n_sequences
    segments = table.segments
    rows = np.arange(len(segments))
    absolute = False

    ops = chain.ops
    for op in ops[1:-1]:
        if isinstance(op, FilterBy):
            code = schema.column(op.column).codes[op.category]
            rows = rows[table.columns[op.column][rows] != code]
        elif isinstance(op, RetainBy):
            code = schema.column(op.column).codes[op.category]
            rows = rows[table.columns[op.column][rows] == code]
        elif isinstance(op, SortBy):
            key = table.columns[op.column][rows]
            rows = rows[np.lexsort((-key if op.descending else key, segments[rows]))]
        elif isinstance(op, Top5):
            seg = segments[rows]
            _, starts = _segment_starts(seg, n)
            rows = rows[np.arange(len(rows)) - starts[seg] < constants.TOP_ROWS]
        elif isinstance(op, Abs):
            absolute = True
        elif not isinstance(op, GroupBy):
            raise AssertionError(f"Unhandled operator {op!r}")

    agg = ops[-1]
    seg = segments[rows]
    target = schema.column(chain.target)
    if target.is_categorical:
        codes = table.columns[target.name][rows]
        dims = [
            _reduce(agg, (codes == j).astype(np.float64), seg, n)
            for j in range(len(target.vocab))
        ]
        return np.column_stack(dims).reshape(n, len(target.vocab))

    values = table.columns[target.name][rows]
    if absolute:
        values = np.abs(values)

    group_by = chain.group_by
    if group_by is None:
        return _reduce(agg, values, seg, n).reshape(n, 1)

    p = len(schema.column(group_by.column).vocab)
    keys = seg * p + table.columns[group_by.column][rows]
    return _reduce(agg, values, keys, n * p).reshape(n, p)


def evaluate(chain: StatisticChain, seq: EventSequence) -> Union[float, np.ndarray]:
    """Evaluate a valid chain on one sequence.

    Returns:
        A float for scalar statistics, otherwise a vector with one entry per
        category of the one-hot target or group-by column.
    """
    table = Table.from_sequences(chain.schema, [seq])
    values = evaluate_table(chain, chain.schema, table)[0]
    return float(values[0]) if chain.is_scalar else values


def evaluate_column(
    chain: StatisticChain, dataset: Dataset, indices: Optional[Sequence[int]] = None
) -> np.ndarray:
    """Evaluate a valid chain on the sequences at `indices`, all of them by default.

    Returns:
        A matrix of shape `(len(indices), chain.output_dim)`.
    """
    table = dataset.table if indices is None else dataset.table.take(indices)
    return evaluate_table(chain, dataset.schema, table)

