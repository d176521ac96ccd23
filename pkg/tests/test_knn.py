"""Tests for the brute-force KNN classifier."""

import numpy as np
import pytest

from exceptions import DimensionMismatchError, InvalidArgumentError
from knn import KnnModel, knn_classify


def _oracle(features, labels, k, query, n_classes=4):
    scored = []
    for index, row in enumerate(features):
        scored.append((sum((a - b) ** 2 for a, b in zip(row, query)), index))
    scored.sort()
    counts = [0] * n_classes
    for _, index in scored[:k]:
        counts[labels[index]] += 1
    best = max(counts)
    return min(c for c in range(n_classes) if counts[c] == best)


class TestKnn:
    def test_training_point_with_k1(self, rng):
        X = rng.normal(size=(10, 4))
        y = rng.integers(0, 4, size=10)
        model = KnnModel.fit(X, y, k=1)
        for row, label in zip(X, y):
            assert knn_classify(model, row) == label

    def test_k_equals_n_gives_majority(self):
        X = np.arange(5.0).reshape(5, 1)
        model = KnnModel.fit(X, [0, 0, 1, 2, 3], k=5)
        assert knn_classify(model, np.array([100.0])) == 0

    def test_distance_tie_keeps_lower_index(self):
        X = np.array([[1.0], [1.0], [5.0]])
        model = KnnModel.fit(X, [3, 1, 2], k=1)
        assert knn_classify(model, np.array([1.0])) == 3

    def test_vote_tie_goes_to_smallest_class(self):
        X = np.array([[0.0], [1.0], [2.0], [10.0]])
        model = KnnModel.fit(X, [2, 1, 3, 0], k=3)
        assert knn_classify(model, np.array([0.4])) == 1

    @pytest.mark.parametrize("k", [1, 3, 5])
    def test_matches_brute_force_oracle(self, k):
        rng = np.random.default_rng(k)
        # integer features make equal distances common
        X = rng.integers(0, 4, size=(60, 3)).astype(float)
        y = rng.integers(0, 4, size=60)
        model = KnnModel.fit(X, y, k=k)
        queries = rng.integers(0, 4, size=(200, 3)).astype(float)
        for q in queries:
            assert knn_classify(model, q) == _oracle(X.tolist(), y.tolist(), k, q.tolist())

    def test_k_bounds(self):
        X = np.zeros((3, 2))
        with pytest.raises(InvalidArgumentError):
            KnnModel.fit(X, [0, 1, 2], k=4)
        with pytest.raises(InvalidArgumentError):
            KnnModel.fit(X, [0, 1, 2], k=0)

    def test_dimension_mismatch(self):
        model = KnnModel.fit(np.zeros((3, 2)), [0, 1, 2], k=1)
        with pytest.raises(DimensionMismatchError):
            knn_classify(model, np.zeros(3))

    @pytest.mark.parametrize("k", [2, 4])
    def test_even_k_rejected(self, k):
        with pytest.raises(InvalidArgumentError, match="odd"):
            KnnModel.fit(np.eye(4), [0, 1, 2, 3], k=k)

    def test_training_set_is_read_only(self):
        model = KnnModel.fit(np.zeros((3, 2)), [0, 1, 2], k=1)
        with pytest.raises(ValueError):
            model.features[0, 0] = 1.0
