import numpy as np
import pytest

from tools.dataset_tool import Dataset
from tools.errors import DataError, DomainError
from tools.forest_tool import ForestConfig, predict_proba, train_forest
from tools.numerics_tool import auc

SMALL = ForestConfig(n_trees=25, seed=3)


def make_data(n, seed, signal=1.0):
    gen = np.random.default_rng(seed)
    y = gen.integers(0, 2, size=n)
    x = gen.normal(size=(n, 3))
    x[:, 0] += signal * (2 * y - 1)
    return Dataset(x, y, ("a", "b", "c"))


def test_separable_classes_are_ranked_perfectly():
    train, test = make_data(300, 0, signal=4.0), make_data(200, 1, signal=4.0)
    forest = train_forest(train, SMALL)
    assert auc(test.response, predict_proba(forest, test)) >= 0.99


def test_noise_labels_give_chance_auc():
    train, test = make_data(300, 2, signal=0.0), make_data(400, 3, signal=0.0)
    forest = train_forest(train, SMALL)
    assert 0.4 <= auc(test.response, predict_proba(forest, test)) <= 0.6


def test_same_seed_same_predictions():
    train, test = make_data(200, 4), make_data(50, 5)
    a = predict_proba(train_forest(train, SMALL), test)
    b = predict_proba(train_forest(train, SMALL), test)
    assert np.array_equal(a, b)
    c = predict_proba(train_forest(train, ForestConfig(n_trees=25, seed=4)), test)
    assert not np.array_equal(a, c)


def test_parallel_training_matches_serial():
    train, test = make_data(200, 6), make_data(50, 7)
    serial = predict_proba(train_forest(train, SMALL, jobs=1), test)
    parallel = predict_proba(train_forest(train, SMALL, jobs=2), test)
    assert np.array_equal(serial, parallel)


def test_predictions_invariant_under_increasing_transforms():
    train, test = make_data(200, 8), make_data(80, 9)

    def warp(data):
        return Dataset(np.exp(data.features / 3.0), data.response, data.names)

    plain = predict_proba(train_forest(train, SMALL), test)
    warped = predict_proba(train_forest(warp(train), SMALL), warp(test))
    assert np.array_equal(plain, warped)


def test_probabilities_are_vote_fractions():
    forest = train_forest(make_data(150, 10), SMALL)
    p = predict_proba(forest, make_data(40, 11).features)
    assert np.all((p >= 0.0) & (p <= 1.0))
    assert np.allclose(p * 25, np.round(p * 25))


def test_single_class_training_fails():
    data = make_data(50, 12)
    with pytest.raises(DataError):
        train_forest(Dataset(data.features, np.ones(50), data.names), SMALL)


def test_feature_count_checks():
    forest = train_forest(make_data(100, 13), SMALL)
    with pytest.raises(DomainError):
        predict_proba(forest, np.zeros((2, 4)))
    with pytest.raises(DomainError):
        train_forest(make_data(100, 13), ForestConfig(n_trees=2, features_per_split=5))
