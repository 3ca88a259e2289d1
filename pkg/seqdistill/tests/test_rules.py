import itertools

import numpy as np
import pytest

from seqdistill import nln, rules
from seqdistill.binarize import LiteralDescriptor, augment_matrix
from seqdistill.exceptions import ArtifactError, MetricError, ShapeError
from seqdistill.nln import NlnConfig, NlnParams
from seqdistill.operators import evaluate_column, parse_chain
from seqdistill.rules import FALSE, TRUE, And, Literal, Or, Rule, RuleSet
from seqdistill.tests.conftest import one_hot_logits


@pytest.fixture
def descriptors(schema):
    amount = parse_chain("Sum∘Select[amount]", schema)
    types = parse_chain("Sum∘Select[type]", schema)
    return (
        LiteralDescriptor(amount, 0, 3.0),
        LiteralDescriptor(types, 1, 0.5),
        LiteralDescriptor(parse_chain("Max∘Select[duration]", schema), 0, 1.25),
        LiteralDescriptor(amount, 0, -2.0),
    )


def all_rows(n):
    return np.array(list(itertools.product([0, 1], repeat=n)), dtype=np.uint8)


@pytest.mark.parametrize(
    "y_tilde, expected",
    [
        ([1.0, 2.0, 3.0], 1.0),
        ([3.0, 2.0, 1.0], 0.0),
        ([5.0, 5.0, 5.0], 0.5),
        ([10.0, 20.0, 30.0], 1.0),
    ],
)
def test_fidelity(y_tilde, expected):
    assert rules.fidelity([1.0, 2.0, 3.0], y_tilde) == pytest.approx(expected)


def test_fidelity_errors():
    with pytest.raises(MetricError, match="at least 2"):
        rules.fidelity([1.0], [1.0])
    with pytest.raises(ShapeError, match="3 teacher scores for 2"):
        rules.fidelity([1.0, 2.0, 3.0], [1.0, 2.0])


def test_fidelity_matches_pair_count():
    rng = np.random.default_rng(0)
    n = 2500
    y = rng.integers(0, 50, size=n).astype(float)
    y_tilde = y + rng.normal(0.0, 5.0, size=n)

    teacher = y[:, None] > y[None, :]
    student = y_tilde[:, None] > y_tilde[None, :]
    agree = np.count_nonzero(teacher == student) - n
    assert rules.fidelity(y, y_tilde) == pytest.approx(agree / (n * (n - 1)), abs=1e-12)


@pytest.mark.parametrize(
    "labels, scores, expected",
    [
        ([0, 0, 1, 1], [0.1, 0.2, 0.3, 0.4], 1.0),
        ([0, 0, 1, 1], [1.0, 1.0, 1.0, 1.0], 0.5),
        ([0, 1, 0, 1], [0.1, 0.4, 0.5, 0.8], 0.75),
        ([1, 1, 0, 0], [0.1, 0.2, 0.3, 0.4], 0.0),
    ],
)
def test_auc(labels, scores, expected):
    assert rules.auc(labels, scores) == pytest.approx(expected)


def test_auc_single_class():
    with pytest.raises(MetricError, match="both classes"):
        rules.auc([1, 1, 1], [0.1, 0.2, 0.3])
    with pytest.raises(ShapeError):
        rules.auc([0, 1], [0.1])


def test_score(descriptors):
    ruleset = RuleSet(
        rules=(
            Rule(-0.3722, Literal(0)),
            Rule(-0.3042, And(Literal(0), Literal(1))),
            Rule(0.5174, Literal(2)),
            Rule(0.4564, Or(Literal(3), Literal(0))),
        ),
        descriptors=descriptors,
    )
    row = np.array([0, 0, 1, 1])
    assert rules.score(ruleset, row) == pytest.approx(0.9738)
    assert rules.fires(ruleset, row).tolist() == [[0.0, 0.0, 1.0, 1.0]]

    matrix = np.array([[0, 0, 1, 1], [1, 1, 0, 0], [0, 0, 0, 0]])
    np.testing.assert_allclose(
        rules.score(ruleset, matrix), [0.9738, -0.3722 - 0.3042 + 0.4564, 0.0]
    )
    assert isinstance(rules.score(ruleset, row), float)

    with pytest.raises(ShapeError, match="do not match 4 literals"):
        rules.score(ruleset, np.zeros(3))


def test_ruleset_validation(descriptors):
    with pytest.raises(ShapeError, match="non-finite weight"):
        RuleSet(rules=(Rule(float("nan"), TRUE),), descriptors=descriptors)
    with pytest.raises(ShapeError, match="reads literal 4 of 4"):
        RuleSet(rules=(Rule(1.0, Literal(4)),), descriptors=descriptors)

    ruleset = RuleSet(
        rules=(Rule(1.0, TRUE), Rule(2.0, And(Literal(0), Or(Literal(1), Literal(2))))),
        descriptors=descriptors,
    )
    assert len(ruleset) == 2
    assert ruleset.weights.tolist() == [1.0, 2.0]
    assert ruleset.max_literals == 3


@pytest.mark.parametrize(
    "expr, simplified",
    [
        (And(Literal(0), TRUE), Literal(0)),
        (And(TRUE, Literal(0)), Literal(0)),
        (And(Literal(0), FALSE), FALSE),
        (Or(Literal(0), FALSE), Literal(0)),
        (Or(TRUE, Literal(1)), TRUE),
        (And(Literal(2), Literal(2)), Literal(2)),
        (Or(Literal(1, True), Literal(1, True)), Literal(1, True)),
        (And(Or(FALSE, Literal(0)), Or(Literal(1), TRUE)), Literal(0)),
        (And(Literal(0), Literal(0, True)), And(Literal(0), Literal(0, True))),
        (Or(And(FALSE, TRUE), Or(FALSE, FALSE)), FALSE),
    ],
)
def test_simplify(expr, simplified):
    assert expr.simplify() == simplified


def random_expr(rng, depth):
    if depth == 0 or rng.random() < 0.2:
        pick = int(rng.integers(6))
        if pick == 4:
            return TRUE
        if pick == 5:
            return FALSE
        return Literal(pick % 2, negated=pick >= 2)

    cls = And if rng.random() < 0.5 else Or
    return cls(random_expr(rng, depth - 1), random_expr(rng, depth - 1))


def test_simplify_preserves_semantics():
    rng = np.random.default_rng(0)
    bits = all_rows(2)
    for _ in range(500):
        expr = random_expr(rng, 4)
        simplified = expr.simplify()
        assert simplified.evaluate(bits).tolist() == expr.evaluate(bits).tolist()
        assert simplified.literal_count() <= expr.literal_count()


def test_render(descriptors):
    ruleset = RuleSet(
        rules=(
            Rule(0.1, TRUE),
            Rule(-1.23456, And(Literal(0), Literal(1, negated=True))),
            Rule(2.0, Or(Literal(2), Literal(3))),
        ),
        descriptors=descriptors,
    )
    assert rules.render(ruleset) == (
        "+0.1000  TRUE (bias)\n"
        "-1.2346  (Sum∘Select[amount] > 3) AND (NOT (Sum∘Select[type=B] > 0.5))\n"
        "+2.0000  (Max∘Select[duration] > 1.25) OR (Sum∘Select[amount] > -2)\n"
    )
    assert rules.render(RuleSet(rules=(), descriptors=descriptors)) == ""


def test_render_warns_on_anomalies(descriptors):
    ruleset = RuleSet(
        rules=(
            Rule(1.0, And(Literal(0), And(Literal(2), Literal(0, negated=True)))),
            Rule(1.0, Or(Literal(1), Or(Literal(1, negated=True), Literal(2)))),
        ),
        descriptors=descriptors,
    )
    with pytest.warns(UserWarning) as record:
        text = rules.render(ruleset)

    messages = [str(w.message) for w in record]
    assert messages == [
        "Rule 1 holds a contradiction on Sum∘Select[amount] > 3",
        "Rule 2 holds a tautology on Sum∘Select[type=B] > 0.5",
    ]
    assert "NOT (Sum∘Select[amount] > 3)" in text


def test_anomalies_need_the_same_operator():
    expr = And(Literal(0), Or(Literal(0, negated=True), Literal(1)))
    assert rules.anomalies(expr) == []
    assert rules.anomalies(Or(Literal(3), Literal(3, negated=True))) == [("tautology", 3)]


def test_extract_known_network(descriptors):
    # layer 1: u = x0 AND x1, v = NOT x0 OR FALSE
    # layer 2 reads [u, v, x0, x1, NOT x0, NOT x1, TRUE, FALSE]
    first = one_hot_logits([(0, 1, 2, 5)], 6)
    second = one_hot_logits([(0, 6, 1, 3)], 8)
    params = NlnParams(layers=[first, second], weights=np.array([1.5, -0.5]))

    ruleset = rules.extract(params, descriptors[:2], provenance=[("seed", "0")])
    assert ruleset.rules == (
        Rule(1.5, And(Literal(0), Literal(1))),
        Rule(-0.5, Or(Literal(0, negated=True), Literal(1))),
    )
    assert ruleset.provenance == (("seed", "0"),)

    bits = all_rows(2)
    _, expected = nln.forward_hard(params, augment_matrix(bits))
    assert rules.score(ruleset, bits).tolist() == expected.tolist()


def test_extract_descriptor_mismatch(descriptors):
    params = nln.init_params(3, NlnConfig(hidden=2, rules=2), np.random.default_rng(0))
    with pytest.raises(ShapeError, match="reads 3 literals, got 4"):
        rules.extract(params, descriptors)


@pytest.mark.parametrize("seed", range(3))
def test_extract_matches_hard_forward_exhaustively(schema, seed):
    chain = parse_chain("Sum∘Select[amount]", schema)
    descriptors = [LiteralDescriptor(chain, 0, float(t)) for t in range(10)]
    rng = np.random.default_rng(seed)
    params = nln.init_params(10, NlnConfig(), rng)

    ruleset = rules.extract(params, descriptors)
    bits = all_rows(10)
    activations, expected = nln.forward_hard(params, augment_matrix(bits))
    assert np.array_equal(rules.score(ruleset, bits), expected)
    assert np.array_equal(rules.fires(ruleset, bits), activations[-1])


def test_extract_matches_hard_forward_after_training(schema):
    chain = parse_chain("Sum∘Select[amount]", schema)
    descriptors = [LiteralDescriptor(chain, 0, float(t)) for t in range(30)]
    rng = np.random.default_rng(0)
    train_bits = rng.integers(0, 2, size=(64, 30))
    y = train_bits[:, :3].sum(axis=1) + rng.normal(0.0, 0.1, size=64)
    cfg = NlnConfig(hidden=5, rules=6, epochs=5, batch_size=32)
    params = nln.train(augment_matrix(train_bits), y, cfg, rng=rng)

    ruleset = rules.extract(params, descriptors)
    bits = rng.integers(0, 2, size=(10000, 30))
    _, expected = nln.forward_hard(params, augment_matrix(bits))
    assert np.array_equal(rules.score(ruleset, bits), expected)


def test_literal_bits_and_score_dataset(dataset, descriptors):
    ruleset = RuleSet(
        rules=(Rule(1.0, Literal(0)), Rule(-2.0, And(Literal(1), Literal(3)))),
        descriptors=descriptors,
    )
    amount = evaluate_column(descriptors[0].chain, dataset)[:, 0]
    types = evaluate_column(descriptors[1].chain, dataset)[:, 1]
    duration = evaluate_column(descriptors[2].chain, dataset)[:, 0]
    expected = np.column_stack([amount > 3.0, types > 0.5, duration > 1.25, amount > -2.0])

    bits = rules.literal_bits(ruleset, dataset)
    assert bits.dtype == np.uint8
    assert np.array_equal(bits, expected)
    assert np.array_equal(rules.literal_bits(ruleset, dataset, [4, 2]), expected[[4, 2]])

    scores = rules.score_dataset(ruleset, dataset)
    np.testing.assert_allclose(scores, expected[:, 0] - 2.0 * (expected[:, 1] & expected[:, 3]))


def test_dump_and_load(schema, descriptors):
    ruleset = RuleSet(
        rules=(
            Rule(0.1, TRUE),
            Rule(-0.30000000000000004, And(Literal(0), Or(Literal(1, negated=True), FALSE))),
        ),
        descriptors=descriptors,
        provenance=(("seed", "3"), ("config_hash", "abc")),
    )
    lines = rules.dump_rules(ruleset)
    assert lines[:3] == [
        "provenance\tseed\t3",
        "provenance\tconfig_hash\tabc",
        "literal\t0\tSum∘Select[amount] > 3",
    ]
    assert "rule\t-0.30000000000000004\tand($0,or(!$1,false))" in lines
    assert "# +0.1000  TRUE (bias)" in lines

    assert rules.load_rules(lines, schema) == ruleset


@pytest.mark.parametrize(
    "lines, match",
    [
        (["literal\t1\tSum∘Select[amount] > 3"], "literal 1 is out of order"),
        (["rule\theavy\ttrue"], 'invalid weight "heavy"'),
        (["weight\t1"], 'unknown entry "weight"'),
        (["rule\t1.0\tand($0"], "Unexpected text"),
        (["rule\t1.0\tand($0;$1)"], "Unexpected text"),
        (["rule\t1.0\t$0 $1"], "Trailing text"),
        (["rule\t1.0\t)"], 'Unexpected "\\)"'),
    ],
)
def test_load_rules_errors(schema, lines, match):
    with pytest.raises(ArtifactError, match=match):
        rules.load_rules(lines, schema)


def test_parse_expr():
    assert rules.parse_expr(" or( !$12 , and(true,$3))") == Or(
        Literal(12, negated=True), And(TRUE, Literal(3))
    )
