"""Weighted boolean rules read off a trained network"""

import dataclasses
import logging
import re
import warnings
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import sklearn.metrics

from seqdistill.binarize import LiteralDescriptor
from seqdistill.dataset import Dataset, Schema
from seqdistill.exceptions import ArtifactError, MetricError, ShapeError
from seqdistill.nln import NlnParams, hard_wiring, weigh_rules
from seqdistill.operators import evaluate_column

logger = logging.getLogger(__name__)

_FIDELITY_CHUNK = 1024


class BoolExpr:
    """A boolean expression over the literals of a literal table"""

    def evaluate(self, bits: np.ndarray) -> np.ndarray:
        """The value of the expression for every row of a literal matrix"""
        raise NotImplementedError

    def leaves(self) -> Iterator["BoolExpr"]:
        yield self

    def literal_count(self) -> int:
        return sum(1 for leaf in self.leaves() if isinstance(leaf, Literal))

    def simplify(self) -> "BoolExpr":
        return self

    def dump(self) -> str:
        """The machine-readable form stored in rules files"""
        raise NotImplementedError

    def render(self, descriptors: Sequence[LiteralDescriptor]) -> str:
        """The human-readable form, with literals spelled out"""
        raise NotImplementedError


@dataclasses.dataclass(frozen=True)
class Const(BoolExpr):
    value: bool

    def evaluate(self, bits: np.ndarray) -> np.ndarray:
        return np.full(len(bits), self.value, dtype=bool)

    def dump(self) -> str:
        return "true" if self.value else "false"

    def render(self, descriptors: Sequence[LiteralDescriptor]) -> str:
        return "TRUE" if self.value else "FALSE"


TRUE = Const(True)
FALSE = Const(False)


@dataclasses.dataclass(frozen=True)
class Literal(BoolExpr):
    """A literal column, or its negation when read from the negated input block"""

    index: int
    negated: bool = False

    def evaluate(self, bits: np.ndarray) -> np.ndarray:
        col = bits[:, self.index] > 0
        return ~col if self.negated else col

    def dump(self) -> str:
        return f"!${self.index}" if self.negated else f"${self.index}"

    def render(self, descriptors: Sequence[LiteralDescriptor]) -> str:
        text = descriptors[self.index].render()
        return f"NOT ({text})" if self.negated else text


@dataclasses.dataclass(frozen=True)
class _Binary(BoolExpr):
    left: BoolExpr
    right: BoolExpr

    keyword = ""

    def leaves(self) -> Iterator[BoolExpr]:
        yield from self.left.leaves()
        yield from self.right.leaves()

    def dump(self) -> str:
        return f"{self.keyword.lower()}({self.left.dump()},{self.right.dump()})"

    def render(self, descriptors: Sequence[LiteralDescriptor]) -> str:
        left = self.left.render(descriptors)
        right = self.right.render(descriptors)
        return f"({left}) {self.keyword} ({right})"

    def operands(self) -> Iterator[BoolExpr]:
        """The operands of this node and of directly nested nodes of the same kind"""
        for child in (self.left, self.right):
            if type(child) is type(self):
                yield from child.operands()  # type: ignore[attr-defined]
            else:
                yield child

    def conflicting_literals(self) -> List[int]:
        """Literal indices that appear both plain and negated among the operands"""
        seen: Dict[int, set] = {}
        for operand in self.operands():
            if isinstance(operand, Literal):
                seen.setdefault(operand.index, set()).add(operand.negated)

        return sorted(index for index, signs in seen.items() if len(signs) == 2)


@dataclasses.dataclass(frozen=True)
class And(_Binary):
    keyword = "AND"

    def evaluate(self, bits: np.ndarray) -> np.ndarray:
        return self.left.evaluate(bits) & self.right.evaluate(bits)

    def simplify(self) -> BoolExpr:
        left, right = self.left.simplify(), self.right.simplify()
        if left == FALSE or right == FALSE:
            return FALSE
        if left == TRUE:
            return right
        if right == TRUE or left == right:
            return left

        return And(left, right)


@dataclasses.dataclass(frozen=True)
class Or(_Binary):
    keyword = "OR"

    def evaluate(self, bits: np.ndarray) -> np.ndarray:
        return self.left.evaluate(bits) | self.right.evaluate(bits)

    def simplify(self) -> BoolExpr:
        left, right = self.left.simplify(), self.right.simplify()
        if left == TRUE or right == TRUE:
            return TRUE
        if left == FALSE:
            return right
        if right == FALSE or left == right:
            return left

        return Or(left, right)


def anomalies(expr: BoolExpr) -> List[Tuple[str, int]]:
    """Contradictions (`a AND NOT a`) and tautologies (`a OR NOT a`) inside an expression.

    Returns:
        `("contradiction" | "tautology", literal index)` pairs.
    """
    found: List[Tuple[str, int]] = []

    def visit(node: BoolExpr, parent: Optional[type]) -> None:
        if not isinstance(node, _Binary):
            return
        if type(node) is not parent:
            kind = "contradiction" if isinstance(node, And) else "tautology"
            found.extend((kind, index) for index in node.conflicting_literals())
        visit(node.left, type(node))
        visit(node.right, type(node))

    visit(expr, None)
    return found


@dataclasses.dataclass(frozen=True)
class Rule:
    weight: float
    expr: BoolExpr


@dataclasses.dataclass(frozen=True)
class RuleSet:
    """Weighted rules and the literals they read.

    Attributes:
        rules: One rule per last-layer neuron, in neuron order.
        descriptors: The literal columns `Literal.index` refers to.
        provenance: Free-form `key: value` pairs written to the rules file.
    """

    rules: Tuple[Rule, ...]
    descriptors: Tuple[LiteralDescriptor, ...]
    provenance: Tuple[Tuple[str, str], ...] = ()

    def __post_init__(self):
        for pos, rule in enumerate(self.rules):
            if not np.isfinite(rule.weight):
                raise ShapeError(f"Rule {pos + 1} has a non-finite weight {rule.weight}")
            for leaf in rule.expr.leaves():
                if isinstance(leaf, Literal) and not 0 <= leaf.index < len(self.descriptors):
                    raise ShapeError(
                        f"Rule {pos + 1} reads literal {leaf.index} of {len(self.descriptors)}"
                    )

    def __len__(self) -> int:
        return len(self.rules)

    @property
    def weights(self) -> np.ndarray:
        return np.array([rule.weight for rule in self.rules], dtype=np.float64)

    @property
    def max_literals(self) -> int:
        return max((rule.expr.literal_count() for rule in self.rules), default=0)


def _unfold(
    wiring: List[np.ndarray], n_literals: int, n_half: List[int]
) -> List[BoolExpr]:
    """The expression of every last-layer neuron, unsimplified"""
    cache: Dict[Tuple[int, int], BoolExpr] = {}

    def node(layer: int, index: int) -> BoolExpr:
        # layer 0 is the augmented input
        if layer == 0:
            if index < n_literals:
                return Literal(index)
            if index < 2 * n_literals:
                return Literal(index - n_literals, negated=True)
            return TRUE if index == 2 * n_literals else FALSE

        key = (layer, index)
        if key not in cache:
            half = n_half[layer - 1]
            if index >= 2 * half:
                cache[key] = node(layer - 1, index - 2 * half)
            else:
                picks = wiring[layer - 1]
                if index < half:
                    a, b = picks[0, index], picks[1, index]
                    cache[key] = And(node(layer - 1, a), node(layer - 1, b))
                else:
                    a, b = picks[2, index - half], picks[3, index - half]
                    cache[key] = Or(node(layer - 1, a), node(layer - 1, b))

        return cache[key]

    depth = len(wiring)
    return [node(depth, index) for index in range(2 * n_half[-1])]


def extract(
    params: NlnParams,
    descriptors: Sequence[LiteralDescriptor],
    provenance: Sequence[Tuple[str, str]] = (),
) -> RuleSet:
    """Read the weighted rules off a network.

    Every selector takes the argmax of its logits, the first on ties. Each
    last-layer neuron is unfolded through the skip-connected layers down to
    literals, negated literals and constants, then simplified with
    `AND(x, TRUE) = x`, `AND(x, FALSE) = FALSE`, `OR(x, FALSE) = x`,
    `OR(x, TRUE) = TRUE`, `AND(x, x) = x` and `OR(x, x) = x`. A literal
    combined with its own negation is left as is.

    Args:
        params: A trained network.
        descriptors: The literal columns the network was trained on.
        provenance: Pairs recorded in the rules file.

    Returns:
        One rule per last-layer neuron, weighted by the rule weights.
    """
    n_literals = (params.in_width(0) - 2) // 2
    if n_literals != len(descriptors):
        raise ShapeError(
            f"Network reads {n_literals} literals, got {len(descriptors)} descriptors"
        )

    n_half = [W.shape[1] for W in params.layers]
    exprs = _unfold(hard_wiring(params), n_literals, n_half)
    rules = tuple(
        Rule(weight=float(w), expr=expr.simplify()) for w, expr in zip(params.weights, exprs)
    )
    logger.info(
        "Extracted %d rules with at most %d literals each",
        len(rules),
        max((r.expr.literal_count() for r in rules), default=0),
    )
    return RuleSet(rules=rules, descriptors=tuple(descriptors), provenance=tuple(provenance))


def _as_bits(ruleset: RuleSet, bits: np.ndarray) -> np.ndarray:
    bits = np.asarray(bits)
    if bits.ndim == 1:
        bits = bits[None, :]
    if bits.ndim != 2 or bits.shape[1] != len(ruleset.descriptors):
        raise ShapeError(
            f"Literal rows of shape {bits.shape} do not match {len(ruleset.descriptors)} literals"
        )

    return bits


def fires(ruleset: RuleSet, bits: np.ndarray) -> np.ndarray:
    """Which rules hold for every literal row, as a float matrix of shape `(n, R)`"""
    bits = _as_bits(ruleset, bits)
    if not ruleset.rules:
        return np.zeros((len(bits), 0))

    return np.column_stack([rule.expr.evaluate(bits) for rule in ruleset.rules]).astype(
        np.float64
    )


def score(ruleset: RuleSet, bits: np.ndarray) -> Union[float, np.ndarray]:
    """The summed weight of satisfied rules.

    Args:
        ruleset: The rules.
        bits: A literal row, or a matrix of literal rows.

    Returns:
        A float for a single row and an array for a matrix.
    """
    single = np.asarray(bits).ndim == 1
    scores = weigh_rules(fires(ruleset, bits), ruleset.weights)
    return float(scores[0]) if single else scores


def literal_bits(
    ruleset: RuleSet, dataset: Dataset, indices: Optional[Sequence[int]] = None
) -> np.ndarray:
    """The literal matrix of a dataset, computed from the literals' statistics"""
    n = len(dataset) if indices is None else len(indices)
    if not ruleset.descriptors:
        return np.zeros((n, 0), dtype=np.uint8)

    cache: Dict[object, np.ndarray] = {}
    columns = []
    for desc in ruleset.descriptors:
        if desc.chain not in cache:
            cache[desc.chain] = evaluate_column(desc.chain, dataset, indices)
        columns.append(desc.fires(cache[desc.chain][:, desc.dim]))

    return np.column_stack(columns).astype(np.uint8)


def score_dataset(
    ruleset: RuleSet, dataset: Dataset, indices: Optional[Sequence[int]] = None
) -> np.ndarray:
    """Score sequences straight from the rules' literal definitions"""
    return np.asarray(score(ruleset, literal_bits(ruleset, dataset, indices)), dtype=np.float64)


def fidelity(y, y_tilde) -> float:
    """The fraction of ordered pairs on which teacher and student order agree.

    A pair `i != j` agrees when `y_i > y_j` and `ỹ_i > ỹ_j` are both true or
    both false. Pairs tied in the teacher therefore agree whenever the student
    does not put `i` strictly above `j`.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    y_tilde = np.asarray(y_tilde, dtype=np.float64).reshape(-1)
    if len(y) != len(y_tilde):
        raise ShapeError(f"{len(y)} teacher scores for {len(y_tilde)} student scores")

    n = len(y)
    if n < 2:
        raise MetricError("Fidelity needs at least 2 instances")

    agree = 0
    for start in range(0, n, _FIDELITY_CHUNK):
        block = slice(start, start + _FIDELITY_CHUNK)
        teacher = y[block, None] > y[None, :]
        student = y_tilde[block, None] > y_tilde[None, :]
        agree += int(np.count_nonzero(teacher == student))

    # the diagonal always agrees
    return (agree - n) / (n * (n - 1))


def auc(labels, scores) -> float:
    """The area under the ROC curve, with tied scores counted as half"""
    labels = np.asarray(labels).reshape(-1)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if len(labels) != len(scores):
        raise ShapeError(f"{len(labels)} labels for {len(scores)} scores")
    if len(np.unique(labels)) != 2:
        raise MetricError("AUC needs labels of both classes")

    return float(sklearn.metrics.roc_auc_score(labels, scores))


def render(ruleset: RuleSet) -> str:
    """One line per rule: the signed weight to 4 decimals and the expression.

    Contradictory or tautological literal pairs are reported with a warning
    and rendered unchanged.
    """
    lines = []
    for pos, rule in enumerate(ruleset.rules):
        if rule.expr == TRUE:
            text = "TRUE (bias)"
        else:
            text = rule.expr.render(ruleset.descriptors)

        for kind, index in anomalies(rule.expr):
            warnings.warn(
                f"Rule {pos + 1} holds a {kind} on {ruleset.descriptors[index].render()}",
                stacklevel=2,
            )
        lines.append(f"{rule.weight:+.4f}  {text}")

    return "\n".join(lines) + "\n" if lines else ""


def dump_rules(ruleset: RuleSet) -> List[str]:
    """The body lines of a rules file.

    `literal` lines list the descriptors, `rule` lines give the full-precision
    weight and the expression with literals referenced as `$index`, and
    comment lines show the rendered rule.
    """
    lines = [f"provenance\t{key}\t{value}" for key, value in ruleset.provenance]
    for pos, desc in enumerate(ruleset.descriptors):
        lines.append(f"literal\t{pos}\t{desc.render()}")
    for rule in ruleset.rules:
        lines.append(f"rule\t{rule.weight!r}\t{rule.expr.dump()}")
        text = "TRUE (bias)" if rule.expr == TRUE else rule.expr.render(ruleset.descriptors)
        lines.append(f"# {rule.weight:+.4f}  {text}")

    return lines


_TOKEN = re.compile(r"\s*(and\(|or\(|true|false|!?\$\d+|,|\))")


class _ExprParser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, message: str) -> ArtifactError:
        return ArtifactError(f"{message} at position {self.pos} in rule {self.text!r}")

    def token(self) -> str:
        match = _TOKEN.match(self.text, self.pos)
        if not match:
            raise self.error("Unexpected text")

        self.pos = match.end()
        return match.group(1)

    def expect(self, token: str) -> None:
        if self.token() != token:
            raise self.error(f'Expected "{token}"')

    def expr(self) -> BoolExpr:
        token = self.token()
        if token in ("true", "false"):
            return Const(token == "true")
        if token.startswith("!"):
            return Literal(int(token[2:]), negated=True)
        if token.startswith("$"):
            return Literal(int(token[1:]))
        if token in ("and(", "or("):
            left = self.expr()
            self.expect(",")
            right = self.expr()
            self.expect(")")
            return And(left, right) if token == "and(" else Or(left, right)

        raise self.error(f'Unexpected "{token}"')

    def parse(self) -> BoolExpr:
        expr = self.expr()
        if self.text[self.pos :].strip():
            raise self.error("Trailing text")

        return expr


def parse_expr(text: str) -> BoolExpr:
    return _ExprParser(text).parse()


def load_rules(lines: Sequence[str], schema: Schema) -> RuleSet:
    """Parse the body lines of a rules file written by [seqdistill.rules.dump_rules][]"""
    provenance: List[Tuple[str, str]] = []
    descriptors: List[LiteralDescriptor] = []
    rules: List[Rule] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.startswith("#"):
            continue

        kind, _, rest = line.partition("\t")
        if kind == "provenance":
            key, _, value = rest.partition("\t")
            provenance.append((key, value))
        elif kind == "literal":
            index, _, text = rest.partition("\t")
            if index != str(len(descriptors)):
                raise ArtifactError(f"Line {lineno}: literal {index} is out of order")
            descriptors.append(LiteralDescriptor.parse(text, schema))
        elif kind == "rule":
            weight, _, text = rest.partition("\t")
            try:
                value = float(weight)
            except ValueError:
                raise ArtifactError(f'Line {lineno}: invalid weight "{weight}"') from None
            rules.append(Rule(weight=value, expr=parse_expr(text)))
        else:
            raise ArtifactError(f'Line {lineno}: unknown entry "{kind}"')

    return RuleSet(
        rules=tuple(rules), descriptors=tuple(descriptors), provenance=tuple(provenance)
    )
