import numpy as np
import pytest

from seqdistill import numerics
from seqdistill.exceptions import ShapeError


def test_pearson_corr():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert numerics.pearson_corr(x, 2 * x + 1) == pytest.approx(1.0)
    assert numerics.pearson_corr(x, -x) == pytest.approx(-1.0)
    assert numerics.pearson_corr(x, [1.0, -1.0, -1.0, 1.0]) == pytest.approx(0.0)
    assert numerics.pearson_corr(x.reshape(-1, 1), x) == pytest.approx(1.0)


@pytest.mark.parametrize(
    "x, y",
    [
        ([1.0, 1.0, 1.0], [1.0, 2.0, 3.0]),
        ([1.0, 2.0, 3.0], [5.0, 5.0, 5.0]),
        ([1.0], [2.0]),
    ],
)
def test_pearson_corr_degenerate(x, y):
    assert numerics.pearson_corr(x, y) == 0.0


def test_pearson_corr_shapes():
    with pytest.raises(ShapeError, match="lengths 2 and 3"):
        numerics.pearson_corr([1.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(ShapeError, match="must be a vector"):
        numerics.pearson_corr(np.ones((3, 2)), np.ones(3))


def test_zscore():
    z = numerics.zscore([1.0, 2.0, 3.0])
    assert z.mean() == pytest.approx(0.0)
    assert z.std() == pytest.approx(1.0)
    assert numerics.zscore([4.0, 4.0]).tolist() == [0.0, 0.0]


def test_ols_fit_recovers_coefficients():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 2))
    y = 3.0 * X[:, 0] - 2.0 * X[:, 1] + 1.5
    fit = numerics.ols_fit(X, y)
    np.testing.assert_allclose(fit.beta, [3.0, -2.0], atol=1e-9)
    assert fit.intercept == pytest.approx(1.5)
    np.testing.assert_allclose(fit.fitted, y, atol=1e-9)


def test_ols_fit_rank_deficient():
    rng = np.random.default_rng(1)
    one_hot = np.eye(3)[rng.integers(3, size=30)]
    y = one_hot @ np.array([1.0, 2.0, 4.0])
    X = np.column_stack([one_hot, np.ones(30)])
    fit = numerics.ols_fit(X, y)
    assert np.all(np.isfinite(fit.beta))
    assert abs(fit.beta[3]) < 1e-12
    np.testing.assert_allclose(fit.fitted, y, atol=1e-9)


def test_ols_fit_without_columns():
    fit = numerics.ols_fit(np.zeros((3, 0)), [1.0, 2.0, 6.0])
    assert fit.intercept == 3.0
    assert fit.fitted.tolist() == [3.0, 3.0, 3.0]


def test_multiple_corr():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(40, 3))
    y = X @ np.array([1.0, 0.5, -1.0])
    assert numerics.multiple_corr(X, y) == pytest.approx(1.0)
    assert numerics.multiple_corr(X, -y) == pytest.approx(1.0)
    assert numerics.multiple_corr(np.ones((40, 1)), y) == 0.0


def test_residualize():
    rng = np.random.default_rng(3)
    s = rng.normal(size=(60, 1))
    noise = rng.normal(size=60)
    y = 2.0 * s[:, 0] + noise

    residual = numerics.residualize(y, [s])
    assert abs(numerics.pearson_corr(residual, s)) < 1e-9
    assert residual.mean() == pytest.approx(0.0)
    assert numerics.residualize(y, []).tolist() == y.tolist()


def test_multiple_corr_of_set():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(30, 1))
    b = rng.normal(size=(30, 2))
    y = a[:, 0] + b[:, 1]
    assert numerics.multiple_corr_of_set([a, b], y) == pytest.approx(1.0)
    assert numerics.multiple_corr_of_set([], y) == 0.0


@pytest.mark.parametrize(
    "k, expected",
    [(0, 1.0), (50, 2.5), (25, 1.75), (100, 4.0)],
)
def test_percentile(k, expected):
    assert numerics.percentile([4.0, 1.0, 3.0, 2.0], k) == pytest.approx(expected)


def test_percentile_empty():
    with pytest.raises(ShapeError, match="empty"):
        numerics.percentile([], 50)
