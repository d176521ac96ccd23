"""Brute-force k-nearest-neighbour classifier."""

from dataclasses import dataclass

import numpy as np

# Handle imports - try relative first, then absolute
try:
    from .exceptions import DegenerateDataError, DimensionMismatchError, InvalidArgumentError
    from .logger import Logger
except ImportError:
    from exceptions import DegenerateDataError, DimensionMismatchError, InvalidArgumentError
    from logger import Logger

logger = Logger.get_logger(__name__)


@dataclass(frozen=True)
class KnnModel:
    features: np.ndarray
    labels: np.ndarray
    k: int
    n_classes: int = 4

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise DegenerateDataError("KNN needs a nonempty 2-D training matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise DegenerateDataError("KNN labels must match the training rows")
        if not 1 <= self.k <= self.features.shape[0]:
            raise InvalidArgumentError(
                f"k={self.k} must be between 1 and the training size {self.features.shape[0]}")
        if self.k % 2 == 0:
            raise InvalidArgumentError(f"k={self.k} must be odd")

    @classmethod
    def fit(cls, features, labels, k: int = 5, n_classes: int = 4) -> "KnnModel":
        X = np.array(features, dtype=np.float64)
        y = np.array(labels, dtype=np.int64)
        X.setflags(write=False)
        y.setflags(write=False)
        model = cls(X, y, int(k), n_classes)
        logger.debug(f"KNN over {X.shape[0]} points of dimension {X.shape[1]}, k={model.k}")
        return model


def knn_classify(model: KnnModel, feature) -> int:
    """Majority label of the k Euclidean-nearest training points.

    Distance ties keep the lower training index; vote ties go to the
    smallest class index.
    """
    q = np.asarray(feature, dtype=np.float64)
    if q.shape != (model.features.shape[1],):
        raise DimensionMismatchError(
            f"Feature length {q.shape} != trained length {model.features.shape[1]}")
    distances = np.sum((model.features - q) ** 2, axis=1)
    nearest = np.argsort(distances, kind="stable")[:model.k]
    votes = np.bincount(model.labels[nearest], minlength=model.n_classes)
    return int(np.argmax(votes))
