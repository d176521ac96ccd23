"""Kernel support vector machines trained by sequential minimal optimization.

Binary problems are solved with maximal-violating-pair SMO over a cached
kernel matrix; four-class problems use one-vs-one voting.
"""

from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

# Handle imports - try relative first, then absolute
try:
    from .exceptions import DegenerateDataError, DimensionMismatchError, InvalidArgumentError
    from .logger import Logger
except ImportError:
    from exceptions import DegenerateDataError, DimensionMismatchError, InvalidArgumentError
    from logger import Logger

logger = Logger.get_logger(__name__)

TAU = 1e-12


@dataclass(frozen=True)
class Kernel:
    kind: str
    gamma: float = 1.0
    degree: int = 3
    coef0: float = 0.0

    def __post_init__(self):
        if self.kind not in ("poly", "rbf"):
            raise InvalidArgumentError(f"Unknown kernel {self.kind!r}")
        if self.gamma <= 0:
            raise InvalidArgumentError("Kernel gamma must be positive")

    def matrix(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a = np.atleast_2d(a)
        b = np.atleast_2d(b)
        if self.kind == "poly":
            return (self.gamma * (a @ b.T) + self.coef0) ** self.degree
        sq = (a ** 2).sum(axis=1)[:, None] + (b ** 2).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
        return np.exp(-self.gamma * np.clip(sq, 0.0, None))

    def __call__(self, x: np.ndarray, z: np.ndarray) -> float:
        return float(self.matrix(x, z)[0, 0])


def scale_gamma(features: np.ndarray) -> float:
    """1 / (feature_dim * feature variance)."""
    var = float(np.asarray(features).var())
    return 1.0 / (features.shape[1] * var) if var > 0 else 1.0


def dual_objective(alpha: np.ndarray, y: np.ndarray, K: np.ndarray) -> float:
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


@dataclass
class BinarySvm:
    support_vectors: np.ndarray
    dual_coef: np.ndarray
    bias: float
    kernel: Kernel
    alpha: np.ndarray = field(default=None, repr=False)
    objective_history: List[float] = field(default_factory=list, repr=False)
    kkt_gap: float = 0.0
    iterations: int = 0

    def decision(self, features: np.ndarray) -> np.ndarray:
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if features.shape[1] != self.support_vectors.shape[1]:
            raise DimensionMismatchError(
                f"Feature length {features.shape[1]} != trained length {self.support_vectors.shape[1]}")
        return self.kernel.matrix(features, self.support_vectors) @ self.dual_coef + self.bias

    def predict(self, feature: np.ndarray) -> int:
        return 1 if self.decision(feature)[0] >= 0 else -1


def svm_train_smo(features, labels, kernel: Kernel, C: float = 10.0, tol: float = 1e-3,
                  max_passes: int = 200) -> BinarySvm:
    """Solve the soft-margin dual for labels in {-1, +1}.

    Stops when the maximal KKT violation gap drops to tol or after
    max_passes * n pair updates.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    n = X.shape[0]
    if n < 2 or X.ndim != 2 or y.shape != (n,):
        raise DegenerateDataError(f"Need at least 2 samples with matching labels, got {X.shape}")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise InvalidArgumentError("Binary labels must be -1 or +1")
    if np.all(y == 1) or np.all(y == -1):
        raise DegenerateDataError("Training data contains a single class")
    if C <= 0:
        raise InvalidArgumentError("C must be positive")

    K = kernel.matrix(X, X)
    alpha = np.zeros(n)
    grad_sum = np.zeros(n)  # sum_l alpha_l y_l K[:, l]
    objective = 0.0
    history = [objective]
    gap = np.inf
    iteration = 0
    max_iter = max_passes * n

    while iteration < max_iter:
        v = y - grad_sum
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        i = int(np.argmax(np.where(up, v, -np.inf)))
        j = int(np.argmin(np.where(low, v, np.inf)))
        gap = v[i] - v[j]
        if gap <= tol:
            break

        eta = max(K[i, i] + K[j, j] - 2.0 * K[i, j], TAU)
        if y[i] != y[j]:
            lo, hi = max(0.0, alpha[j] - alpha[i]), min(C, C + alpha[j] - alpha[i])
        else:
            lo, hi = max(0.0, alpha[i] + alpha[j] - C), min(C, alpha[i] + alpha[j])
        # E_i - E_j = v_j - v_i
        aj_new = float(np.clip(alpha[j] + y[j] * (v[j] - v[i]) / eta, lo, hi))
        d_j = aj_new - alpha[j]
        d_i = -y[i] * y[j] * d_j
        if d_j == 0.0:
            logger.debug(f"SMO stalled on pair ({i}, {j}) with gap {gap:.3e}")
            break

        objective += (d_i + d_j
                      - (d_i * y[i] * grad_sum[i] + d_j * y[j] * grad_sum[j])
                      - 0.5 * (d_i ** 2 * K[i, i] + d_j ** 2 * K[j, j]
                               + 2.0 * d_i * d_j * y[i] * y[j] * K[i, j]))
        alpha[i] += d_i
        alpha[j] = aj_new
        grad_sum += d_i * y[i] * K[:, i] + d_j * y[j] * K[:, j]
        history.append(objective)
        iteration += 1

    v = y - grad_sum
    up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
    gap = float(v[up].max() - v[low].min()) if up.any() and low.any() else 0.0
    free = (alpha > 0) & (alpha < C)
    if np.any(free):
        bias = float(np.mean(v[free]))
    else:
        bias = float((v[up].max() + v[low].min()) / 2.0)

    support = alpha > 0
    if gap > tol:
        logger.warning(f"SMO stopped after {iteration} updates without converging: "
                       f"KKT gap {gap:.3e} > tol {tol}")
    else:
        logger.debug(f"SMO converged after {iteration} updates: gap {gap:.3e}, "
                     f"{int(support.sum())} support vectors")
    return BinarySvm(
        support_vectors=X[support].copy(),
        dual_coef=(alpha * y)[support].copy(),
        bias=bias,
        kernel=kernel,
        alpha=alpha,
        objective_history=history,
        kkt_gap=float(gap),
        iterations=iteration,
    )


def kkt_violations(model: BinarySvm, features, labels, C: float) -> np.ndarray:
    """Per-sample violation of the soft-margin KKT conditions."""
    y = np.asarray(labels, dtype=np.float64)
    margin = y * model.decision(features)
    alpha = model.alpha
    at_zero = alpha <= 0
    at_c = alpha >= C
    free = ~at_zero & ~at_c
    violation = np.zeros_like(margin)
    violation[at_zero] = np.clip(1.0 - margin[at_zero], 0.0, None)
    violation[at_c] = np.clip(margin[at_c] - 1.0, 0.0, None)
    violation[free] = np.abs(margin[free] - 1.0)
    return violation


def ovo_vote(pair_decisions: Dict[Tuple[int, int], float], n_classes: int) -> int:
    """Majority vote over pairwise decisions; ties go to the larger summed margin.

    A positive decision for pair (a, b) is a win for a.
    """
    votes = np.zeros(n_classes, dtype=np.int64)
    margins = np.zeros(n_classes)
    for (a, b), d in pair_decisions.items():
        votes[a if d >= 0 else b] += 1
        margins[a] += d
        margins[b] -= d
    tied = np.flatnonzero(votes == votes.max())
    return int(tied[np.argmax(margins[tied])])


@dataclass
class SvmModel:
    """One-vs-one ensemble of binary machines."""
    pairs: List[Tuple[int, int, BinarySvm]]
    n_classes: int
    kernel: Kernel
    C: float

    @property
    def dimension(self) -> int:
        return self.pairs[0][2].support_vectors.shape[1]

    def pair_decisions(self, feature: np.ndarray) -> Dict[Tuple[int, int], float]:
        return {(a, b): float(m.decision(feature)[0]) for a, b, m in self.pairs}


def train_one_vs_one(features, labels: Sequence[int], kernel: Kernel, C: float = 10.0,
                     tol: float = 1e-3, max_passes: int = 200, n_classes: int = 4) -> SvmModel:
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    present = np.unique(y)
    if present.size < 2:
        raise DegenerateDataError("Training data contains a single class")
    pairs = []
    for a, b in combinations(present.tolist(), 2):
        mask = (y == a) | (y == b)
        binary = np.where(y[mask] == a, 1.0, -1.0)
        model = svm_train_smo(X[mask], binary, kernel, C, tol, max_passes)
        logger.info(f"SVM pair ({a}, {b}): {model.support_vectors.shape[0]} support vectors, "
                    f"{model.iterations} updates")
        pairs.append((a, b, model))
    return SvmModel(pairs, n_classes, kernel, C)


def svm_predict(model, feature: np.ndarray) -> int:
    """Class index (multiclass) or +-1 (binary)."""
    feature = np.asarray(feature, dtype=np.float64)
    if isinstance(model, BinarySvm):
        return model.predict(feature)
    if feature.shape[-1] != model.dimension:
        raise DimensionMismatchError(
            f"Feature length {feature.shape[-1]} != trained length {model.dimension}")
    return ovo_vote(model.pair_decisions(feature), model.n_classes)
