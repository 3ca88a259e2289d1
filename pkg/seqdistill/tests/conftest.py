import types

import numpy as np
import pytest

from seqdistill import config
from seqdistill.dataset import CATEGORICAL, NUMERICAL, Column, Dataset, EventSequence, Schema


@pytest.fixture
def settings(monkeypatch):
    """A private settings namespace. Attributes set on it are dropped after the test."""
    namespace = types.SimpleNamespace()
    monkeypatch.setattr(config, "settings", namespace)
    return namespace


@pytest.fixture
def schema():
    return Schema(
        columns=(
            Column("type", CATEGORICAL, ("A", "B", "C")),
            Column("amount", NUMERICAL),
            Column("duration", NUMERICAL),
        )
    )


def random_dataset(schema, n, rng, *, max_rows=20):
    """Random sequences of 1 to `max_rows` rows with random scores"""
    sequences = []
    for user in range(n):
        length = int(rng.integers(1, max_rows + 1))
        rows = []
        for _ in range(length):
            row = []
            for col in schema.columns:
                if col.is_categorical:
                    row.append(col.vocab[int(rng.integers(len(col.vocab)))])
                else:
                    row.append(float(np.round(rng.normal(0.0, 10.0), 3)))
            rows.append(tuple(row))
        sequences.append(EventSequence(user_id=f"u{user}", rows=tuple(rows)))

    scores = tuple(float(v) for v in rng.normal(size=n))
    return Dataset(schema=schema, sequences=tuple(sequences), teacher_scores=scores)


@pytest.fixture
def dataset(schema):
    return random_dataset(schema, 40, np.random.default_rng(0))


@pytest.fixture
def tiny(schema):
    """Two users with three events each"""
    return Dataset(
        schema=schema,
        sequences=(
            EventSequence(
                "alice", (("A", 1.0, 2.0), ("B", -3.0, 0.5), ("A", 4.0, 1.0))
            ),
            EventSequence("bob", (("C", 2.0, 1.0), ("C", 5.0, 3.0), ("B", -1.0, 2.0))),
        ),
        teacher_scores=(1.5, -0.5),
    )


def one_hot_logits(picks, h_in, scale=10.0):
    """Logits of shape (4, n_half, h_in) where selector k of neuron j prefers picks[j][k]"""
    W = np.zeros((4, len(picks), h_in))
    for j, neuron in enumerate(picks):
        for k, index in enumerate(neuron):
            W[k, j, index] = scale
    return W
