"""Training loops, optimizers and evaluation for the seven learners."""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

# Handle imports - try relative first, then absolute
try:
    from . import autodiff as ad
    from .autodiff import Tape, Tensor
    from .checkpoint import Checkpoint
    from .datasets import ArrayDataset, DatasetManifest, load_arrays
    from .exceptions import DegenerateDataError, InvalidArgumentError, LabelKindError
    from .imaging import (AugmentPolicy, ChannelNormalizer, FeatureStandardizer, UnwarpCalibration,
                          apply_augmentation, area_resize, raw_pixel_features, sample_augmentation)
    from .knn import KnnModel
    from .logger import Logger
    from .model_spec import Arch, Head, ModelSpec
    from .networks import build_network, normalize_targets, to_batch
    from .predictors import (ClassicalPredictor, NetworkPredictor, Predictor, load_model,
                             pack_classical, pack_network)
    from .reports import HistoryRow, MetricsReport, classification_report, regression_report
    from .simgel import TactileImage
    from .splitting import split
    from .svm import Kernel, scale_gamma, train_one_vs_one
except ImportError:
    import autodiff as ad
    from autodiff import Tape, Tensor
    from checkpoint import Checkpoint
    from datasets import ArrayDataset, DatasetManifest, load_arrays
    from exceptions import DegenerateDataError, InvalidArgumentError, LabelKindError
    from imaging import (AugmentPolicy, ChannelNormalizer, FeatureStandardizer, UnwarpCalibration,
                         apply_augmentation, area_resize, raw_pixel_features, sample_augmentation)
    from knn import KnnModel
    from logger import Logger
    from model_spec import Arch, Head, ModelSpec
    from networks import build_network, normalize_targets, to_batch
    from predictors import (ClassicalPredictor, NetworkPredictor, Predictor, load_model,
                            pack_classical, pack_network)
    from reports import HistoryRow, MetricsReport, classification_report, regression_report
    from simgel import TactileImage
    from splitting import split
    from svm import Kernel, scale_gamma, train_one_vs_one

__all__ = ["OptimizerKind", "TrainConfig", "Optimizer", "DivergenceReport", "TrainResult",
           "split", "clip_gradients", "train", "fit_network", "fit_classical",
           "evaluate_classification", "evaluate_regression"]

logger = Logger.get_logger(__name__)

# Cnn5 regression is prone to large gradients; it gets a clip by default
DEFAULT_REGRESSION_CLIP = 5.0


class OptimizerKind(str, Enum):
    SGD = "Sgd"
    SGD_MOMENTUM = "SgdMomentum"


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.01
    optimizer: OptimizerKind = OptimizerKind.SGD_MOMENTUM
    momentum: float = 0.9
    seed: int = 0
    grad_clip: Optional[float] = None
    early_divergence_threshold: float = 1e3
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    input_size: Tuple[int, int] = (64, 64)
    feature_size: Tuple[int, int] = (32, 24)
    indenter: str = "all"

    def __post_init__(self):
        self.optimizer = OptimizerKind(self.optimizer)
        if not self.learning_rate > 0:
            raise InvalidArgumentError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise InvalidArgumentError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.epochs < 1:
            raise InvalidArgumentError(f"epochs must be at least 1, got {self.epochs}")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise InvalidArgumentError(f"grad_clip must be positive, got {self.grad_clip}")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidArgumentError(f"momentum must be in [0, 1), got {self.momentum}")

    @staticmethod
    def default_clip(spec: ModelSpec) -> Optional[float]:
        if spec.arch == Arch.CNN5 and spec.head == Head.REGRESS_POS_FORCE:
            return DEFAULT_REGRESSION_CLIP
        return None


class Optimizer:
    """Plain SGD or heavy-ball momentum over an ordered parameter set."""

    def __init__(self, params: Dict[str, Tensor], kind: OptimizerKind, learning_rate: float,
                 momentum: float = 0.9):
        self.params = params
        self.kind = OptimizerKind(kind)
        self.learning_rate = learning_rate
        self.momentum = momentum if self.kind == OptimizerKind.SGD_MOMENTUM else 0.0
        self.velocity = {name: np.zeros(t.shape) for name, t in params.items()}

    def step(self):
        for name, t in self.params.items():
            if t.grad is None:
                continue
            v = self.momentum * self.velocity[name] + t.grad
            self.velocity[name] = v
            t.data = t.data - self.learning_rate * v


def global_norm(params: Dict[str, Tensor]) -> float:
    return float(np.sqrt(sum(float(np.sum(t.grad ** 2)) for t in params.values()
                             if t.grad is not None)))


def clip_gradients(params: Dict[str, Tensor], max_norm: Optional[float]) -> float:
    """Rescale gradients to a global L2 norm of at most max_norm; returns the applied norm."""
    norm = global_norm(params)
    if max_norm is None or norm <= max_norm:
        return norm
    scale = max_norm / (norm + 1e-12)
    for t in params.values():
        if t.grad is not None:
            t.grad = t.grad * scale
    return global_norm(params)


@dataclass
class DivergenceReport:
    epoch: int
    batch: int
    loss: float
    threshold: float
    history: List[HistoryRow] = field(default_factory=list)

    def message(self) -> str:
        return (f"Training diverged at epoch {self.epoch}, batch {self.batch}: "
                f"loss {self.loss} exceeds {self.threshold}")


@dataclass
class TrainResult:
    spec: ModelSpec
    history: List[HistoryRow]
    checkpoint: Optional[Checkpoint] = None
    predictor: Optional[Predictor] = None
    best_epoch: int = 0
    divergence: Optional[DivergenceReport] = None

    @property
    def diverged(self) -> bool:
        return self.divergence is not None


def _validation_metric(predictor: NetworkPredictor, val: Optional[ArrayDataset]) -> float:
    """Accuracy (classification) or mean normalized MAE (regression); NaN without data."""
    if val is None or len(val) == 0:
        return float("nan")
    if predictor.spec.head == Head.CLASSIFY4:
        return float(np.mean(predictor.predict_prepared(val.inputs) == val.labels))
    target = normalize_targets(val.labels[:, 0], val.labels[:, 1])
    return float(np.mean(np.abs(predictor.outputs(val.inputs) - target)))


def _improved(metric: float, best: Optional[float], head: Head) -> bool:
    if best is None or np.isnan(metric):
        return True
    return metric > best if head == Head.CLASSIFY4 else metric < best


def _augment_batch(batch: np.ndarray, policy: AugmentPolicy, seeds: np.ndarray) -> np.ndarray:
    return np.stack([apply_augmentation(x, sample_augmentation(policy, int(s)))
                     for x, s in zip(batch, seeds)])


def fit_network(spec: ModelSpec, train_set: ArrayDataset, val_set: Optional[ArrayDataset],
                config: TrainConfig) -> TrainResult:
    """Minibatch training; the returned checkpoint holds the best validation epoch."""
    spec.check_kind(train_set.kind)
    if len(train_set) == 0:
        raise DegenerateDataError("Empty training set")
    config.augment.validate_for(train_set.kind)

    inputs = train_set.inputs
    n = len(train_set)
    net = build_network(spec, (inputs.shape[3], inputs.shape[1], inputs.shape[2]))
    net.normalizer = ChannelNormalizer.fit(to_batch(inputs))
    predictor = NetworkPredictor(net)
    classify = spec.head == Head.CLASSIFY4
    targets = train_set.labels if classify else \
        normalize_targets(train_set.labels[:, 0], train_set.labels[:, 1])

    params = net.parameters()
    optimizer = Optimizer(params, config.optimizer, config.learning_rate, config.momentum)
    augmenting = config.augment != AugmentPolicy()
    rng = np.random.default_rng(config.seed)
    history: List[HistoryRow] = []
    best_metric, best_epoch, best_params = None, 0, None

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total_loss = 0.0
        max_norm = 0.0
        for batch_index, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            batch = inputs[idx]
            if augmenting:
                batch = _augment_batch(batch, config.augment, rng.integers(0, 2 ** 31, len(idx)))
            x = Tensor(net.normalizer.transform(to_batch(batch)))
            with Tape() as tape:
                out = net.forward(x)
                loss = ad.softmax_cross_entropy(out, targets[idx]) if classify \
                    else ad.mse(out, targets[idx])
            value = loss.item()
            if not np.isfinite(value) or value > config.early_divergence_threshold:
                report = DivergenceReport(epoch, batch_index, value,
                                          config.early_divergence_threshold, history)
                logger.warning(report.message())
                return TrainResult(spec, history, divergence=report)

            ad.backward(tape, loss)
            max_norm = max(max_norm, clip_gradients(params, config.grad_clip))
            optimizer.step()
            total_loss += value * len(idx)

        val_metric = _validation_metric(predictor, val_set)
        row = HistoryRow(epoch, total_loss / n, val_metric, max_norm)
        history.append(row)
        logger.info(f"{spec.arch.value} epoch {epoch}/{config.epochs}: loss {row.train_loss:.5f}, "
                    f"val {val_metric:.4f}, max grad norm {max_norm:.3f}")
        if _improved(val_metric, best_metric, spec.head):
            best_metric, best_epoch = val_metric, epoch
            best_params = {name: t.data.copy() for name, t in params.items()}

    net.load_parameters(best_params)
    checkpoint = pack_network(net, meta={"kind": train_set.kind, "best_epoch": best_epoch})
    return TrainResult(spec, history, checkpoint, predictor, best_epoch)


def fit_classical(spec: ModelSpec, train_set: ArrayDataset, val_set: Optional[ArrayDataset],
                  config: TrainConfig) -> TrainResult:
    """SVM or KNN on raw-pixel features standardized with training-split statistics."""
    spec.check_kind(train_set.kind)
    if len(train_set) == 0:
        raise DegenerateDataError("Empty training set")
    hp = spec.hyperparams
    standardizer = FeatureStandardizer.fit(train_set.inputs)
    features = standardizer.transform(train_set.inputs)
    labels = train_set.labels.astype(np.int64)

    if spec.arch == Arch.KNN:
        model = KnnModel.fit(features, labels, int(hp["k"]))
    else:
        gamma = float(hp["gamma"]) if hp.get("gamma") is not None else scale_gamma(features)
        kernel = Kernel("poly" if spec.arch == Arch.SVM_POLY else "rbf", gamma,
                        int(hp["degree"]), float(hp["coef0"]))
        model = train_one_vs_one(features, labels, kernel, float(hp["C"]), float(hp["tol"]),
                                 int(hp["max_passes"]))

    predictor = ClassicalPredictor(spec, model, standardizer, config.feature_size)
    train_error = float(np.mean(predictor.predict_prepared(train_set.inputs) != labels))
    val_metric = float("nan") if val_set is None or len(val_set) == 0 else \
        float(np.mean(predictor.predict_prepared(val_set.inputs) == val_set.labels))
    logger.info(f"{spec.arch.value}: training error {train_error:.4f}, val accuracy {val_metric:.4f}")
    history = [HistoryRow(1, train_error, val_metric, 0.0)]
    checkpoint = pack_classical(predictor, meta={"kind": train_set.kind, "best_epoch": 1})
    return TrainResult(spec, history, checkpoint, predictor, 1)


def input_preparer(spec: ModelSpec, config: TrainConfig):
    """Per-image transform from a full frame to the learner's input."""
    if spec.arch.is_network:
        return lambda pixels: area_resize(pixels, config.input_size)
    return lambda pixels: raw_pixel_features(TactileImage(pixels), config.feature_size)


def train(spec: ModelSpec, manifests: Tuple[DatasetManifest, DatasetManifest],
          config: TrainConfig, calibration: Optional[UnwarpCalibration] = None) -> TrainResult:
    """Load the (train, val) manifests and fit the learner the spec names."""
    train_manifest, val_manifest = manifests
    spec.check_kind(train_manifest.kind)
    spec.check_kind(val_manifest.kind)
    if train_manifest.kind == "regression":
        train_manifest = train_manifest.for_indenter(config.indenter)
        val_manifest = val_manifest.for_indenter(config.indenter)
    prepare = input_preparer(spec, config)
    train_set = load_arrays(train_manifest, prepare=prepare, calibration=calibration)
    val_set = load_arrays(val_manifest, prepare=prepare, calibration=calibration) \
        if len(val_manifest) else None
    logger.info(f"Training {spec.arch.display_name} on {len(train_set)} samples "
                f"({0 if val_set is None else len(val_set)} validation)")
    if spec.arch.is_network:
        return fit_network(spec, train_set, val_set, config)
    return fit_classical(spec, train_set, val_set, config)


def _as_predictor(model: Union[Checkpoint, Predictor]) -> Predictor:
    return load_model(model) if isinstance(model, Checkpoint) else model


def _predict_manifest(predictor: Predictor, manifest: DatasetManifest,
                      calibration: Optional[UnwarpCalibration]):
    predictor.spec.check_kind(manifest.kind)
    data = load_arrays(manifest, prepare=predictor.prepare, calibration=calibration)
    if len(data) == 0:
        raise DegenerateDataError("Evaluation manifest has no records")
    return data.labels, predictor.predict_prepared(data.inputs)


def evaluate_classification(model: Union[Checkpoint, Predictor], manifest: DatasetManifest,
                            calibration: Optional[UnwarpCalibration] = None) -> MetricsReport:
    predictor = _as_predictor(model)
    if predictor.spec.head != Head.CLASSIFY4:
        raise LabelKindError(f"{predictor.spec.head.value} checkpoint cannot be scored as a classifier")
    truth, predicted = _predict_manifest(predictor, manifest, calibration)
    return classification_report(truth, predicted)


def evaluate_regression(model: Union[Checkpoint, Predictor], manifest: DatasetManifest,
                        calibration: Optional[UnwarpCalibration] = None) -> MetricsReport:
    predictor = _as_predictor(model)
    if predictor.spec.head != Head.REGRESS_POS_FORCE:
        raise LabelKindError(f"{predictor.spec.head.value} checkpoint cannot be scored as a regressor")
    truth, predicted = _predict_manifest(predictor, manifest, calibration)
    return regression_report(truth, predicted)
