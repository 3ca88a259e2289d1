"""Synthetic teachers with a known ground truth"""

import dataclasses
import logging
import pathlib
import warnings
from typing import Any, Callable, Dict, List, Tuple, Union

import numpy as np

from seqdistill import artifacts, constants, numerics
from seqdistill.binarize import LiteralDescriptor
from seqdistill.dataset import (
    CATEGORICAL,
    NUMERICAL,
    Column,
    Dataset,
    EventSequence,
    Schema,
    write_dataset,
)
from seqdistill.exceptions import FixtureError
from seqdistill.operators import StatisticChain, evaluate_column, parse_chain
from seqdistill.rules import And, BoolExpr, Literal, Or, Rule, RuleSet, score
from seqdistill.utils import stage_rng

logger = logging.getLogger(__name__)

EVENTS = "events.csv"
SCHEMA = "schema.json"
SCORES = "scores.csv"
MANIFEST = "manifest.json"

SIGNAL_CORR_TOLERANCE = 0.1

SCHEMA_DEFINITION = Schema(
    columns=(
        Column("type", CATEGORICAL, ("A", "B", "C")),
        Column("channel", CATEGORICAL, ("web", "store")),
        Column("amount", NUMERICAL),
        Column("duration", NUMERICAL),
    )
)

MIN_EVENTS = 5
MAX_EVENTS = 30


@dataclasses.dataclass(frozen=True, eq=False)
class Fixture:
    """A generated dataset and the description of how its scores were made"""

    name: str
    dataset: Dataset
    manifest: Dict[str, Any]


Signal = Tuple[np.ndarray, Dict[str, Any]]
FixtureFn = Callable[[Dataset, np.random.Generator], Signal]

_FIXTURES: Dict[str, FixtureFn] = {}


def register_fixture(name: str) -> Callable[[FixtureFn], FixtureFn]:
    def decorator(func: FixtureFn) -> FixtureFn:
        _FIXTURES[name] = func
        return func

    return decorator


def fixtures() -> List[str]:
    return list(_FIXTURES)


def random_sequences(n: int, rng: np.random.Generator) -> List[EventSequence]:
    """Event sequences over the fixture schema.

    Users differ in their category mix, their typical amount and their typical
    duration. Durations are drawn independently of everything else.
    """
    sequences = []
    width = len(str(n - 1))
    for user in range(n):
        length = int(rng.integers(MIN_EVENTS, MAX_EVENTS + 1))
        type_probs = rng.dirichlet(np.ones(3))
        web_prob = float(rng.uniform(0.1, 0.9))
        amount_mu = float(rng.normal(3.0, 0.5))
        duration_scale = float(rng.uniform(1.0, 10.0))

        types = rng.choice(3, size=length, p=type_probs)
        channels = rng.random(length) < web_prob
        amounts = np.exp(rng.normal(amount_mu, 0.5, size=length))
        durations = rng.exponential(duration_scale, size=length)

        rows = tuple(
            (
                SCHEMA_DEFINITION.columns[0].vocab[t],
                "web" if web else "store",
                float(amount),
                float(duration),
            )
            for t, web, amount, duration in zip(types, channels, amounts, durations)
        )
        sequences.append(EventSequence(user_id=f"u{user:0{width}d}", rows=rows))

    return sequences


def _chain(text: str) -> StatisticChain:
    return parse_chain(text, SCHEMA_DEFINITION)


def _signal(dataset: Dataset, text: str) -> np.ndarray:
    return evaluate_column(_chain(text), dataset)[:, 0]


@register_fixture("single-signal")
def single_signal(dataset: Dataset, rng: np.random.Generator) -> Signal:
    """A teacher driven by one statistic plus 1% gaussian noise"""
    text = "Sum∘RetainBy[type=A]∘Select[amount]"
    signal = _signal(dataset, text)
    sigma = 0.01 * float(signal.std())
    y = signal + rng.normal(0.0, sigma, size=len(signal))
    return y, {"statistics": [text], "noise_std": sigma, "formula": "s1 + noise"}


@register_fixture("two-signal")
def two_signal(dataset: Dataset, rng: np.random.Generator) -> Signal:
    """A teacher summing two standardized, independent statistics"""
    texts = ["Sum∘RetainBy[type=A]∘Select[amount]", "Mean∘Select[duration]"]
    s1, s2 = (_signal(dataset, text) for text in texts)
    corr = numerics.pearson_corr(s1, s2)
    if abs(corr) >= SIGNAL_CORR_TOLERANCE:
        warnings.warn(
            f"Fixture signals are correlated at {corr:.3f}, above {SIGNAL_CORR_TOLERANCE}",
            stacklevel=2,
        )

    y = numerics.zscore(s1) + numerics.zscore(s2)
    return y, {"statistics": texts, "signal_corr": corr, "formula": "z(s1) + z(s2)"}


RULE_STATISTICS = (
    "Sum∘RetainBy[type=A]∘Select[amount]",
    "Mean∘Select[duration]",
    "Count∘Select[amount]",
)


def _rule_literals(dataset: Dataset) -> Tuple[List[LiteralDescriptor], np.ndarray]:
    """Literals at fixed percentiles of the known statistics over all users"""
    cuts = ((0, 50), (0, 90), (1, 30), (1, 50), (2, 70))
    descriptors = []
    columns = []
    for stat, k in cuts:
        chain = _chain(RULE_STATISTICS[stat])
        values = evaluate_column(chain, dataset)[:, 0]
        desc = LiteralDescriptor(chain=chain, threshold=numerics.percentile(values, k))
        descriptors.append(desc)
        columns.append(desc.fires(values))

    return descriptors, np.column_stack(columns).astype(np.uint8)


RULE_EXPRESSIONS: Tuple[Tuple[float, BoolExpr], ...] = (
    (1.0, And(Literal(0), Literal(3))),
    (0.6, Literal(4)),
    (-0.8, Or(Literal(1), Literal(2, negated=True))),
)


@register_fixture("rule-teacher")
def rule_teacher(dataset: Dataset, rng: np.random.Generator) -> Signal:
    """A teacher that is itself a weighted sum of three boolean rules"""
    descriptors, bits = _rule_literals(dataset)
    ruleset = RuleSet(
        rules=tuple(Rule(weight=w, expr=expr) for w, expr in RULE_EXPRESSIONS),
        descriptors=tuple(descriptors),
    )
    y = np.asarray(score(ruleset, bits), dtype=np.float64)
    rules = [
        {"weight": rule.weight, "rule": rule.expr.render(ruleset.descriptors)}
        for rule in ruleset.rules
    ]
    return y, {"statistics": list(RULE_STATISTICS), "rules": rules, "formula": "sum of rules"}


def make_synthetic(name: str, n: int, seed: int) -> Fixture:
    """Generate a fixture dataset.

    Args:
        name: One of [seqdistill.synthetic.fixtures][].
        n: The number of users.
        seed: Seed of the fixture's random stream.

    Raises:
        FixtureError: When no fixture has that name.
    """
    if name not in _FIXTURES:
        raise FixtureError(f'Unknown fixture "{name}". Choose from {", ".join(_FIXTURES)}')
    if n < 2:
        raise FixtureError(f"A fixture needs at least 2 users, got {n}")

    rng = stage_rng(seed, "make-synthetic")
    sequences = random_sequences(n, rng)
    unscored = Dataset(
        schema=SCHEMA_DEFINITION, sequences=tuple(sequences), teacher_scores=(0.0,) * n
    )
    y, details = _FIXTURES[name](unscored, rng)
    dataset = Dataset(
        schema=SCHEMA_DEFINITION,
        sequences=tuple(sequences),
        teacher_scores=tuple(float(v) for v in y),
    )

    manifest = {"fixture": name, "n": n, "seed": seed, **details}
    logger.info("Generated the %s fixture with %d users", name, n)
    return Fixture(name=name, dataset=dataset, manifest=manifest)


def write_fixture(fixture: Fixture, out: Union[str, pathlib.Path]) -> Dict[str, pathlib.Path]:
    """Write the dataset files and the manifest into a directory, creating it if needed"""
    out = pathlib.Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "events": out / EVENTS,
        "schema": out / SCHEMA,
        "scores": out / SCORES,
        "manifest": out / MANIFEST,
    }
    write_dataset(fixture.dataset, paths["events"], paths["schema"], paths["scores"])
    artifacts.write_json(paths["manifest"], constants.MANIFEST_FORMAT, fixture.manifest)
    return paths


def manifest_chains(manifest: Dict[str, Any]) -> List[StatisticChain]:
    """The generating statistics of a manifest"""
    return [_chain(text) for text in manifest.get("statistics", [])]
