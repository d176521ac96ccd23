"""Trained learners behind one prediction interface, and their checkpoint packing.

A predictor turns a full-resolution tactile frame into its model input
(`prepare`) and maps a batch of prepared inputs to class indices or to
physical (position mm, force N) pairs (`predict_prepared`).
"""

from collections import OrderedDict
from typing import Optional, Sequence, Tuple, Union

import numpy as np

# Handle imports - try relative first, then absolute
try:
    from .checkpoint import Checkpoint
    from .exceptions import CheckpointError, LabelKindError
    from .imaging import ChannelNormalizer, FeatureStandardizer, area_resize, raw_pixel_features
    from .knn import KnnModel, knn_classify
    from .model_spec import Arch, Head, ModelSpec
    from .networks import Network, build_network, denormalize_targets, forward_batch, to_batch
    from .simgel import TactileImage
    from .svm import BinarySvm, Kernel, SvmModel, svm_predict
except ImportError:
    from checkpoint import Checkpoint
    from exceptions import CheckpointError, LabelKindError
    from imaging import ChannelNormalizer, FeatureStandardizer, area_resize, raw_pixel_features
    from knn import KnnModel, knn_classify
    from model_spec import Arch, Head, ModelSpec
    from networks import Network, build_network, denormalize_targets, forward_batch, to_batch
    from simgel import TactileImage
    from svm import BinarySvm, Kernel, SvmModel, svm_predict

ImageLike = Union[TactileImage, np.ndarray]


def _pixels(image: ImageLike) -> np.ndarray:
    return image.pixels if isinstance(image, TactileImage) else np.asarray(image, dtype=np.float64)


class Predictor:
    spec: ModelSpec

    def prepare(self, pixels: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict_prepared(self, batch: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict_class(self, image: ImageLike) -> int:
        if self.spec.head != Head.CLASSIFY4:
            raise LabelKindError(f"{self.spec.arch.display_name} checkpoint is a regression model")
        return int(self.predict_prepared(self.prepare(_pixels(image))[None])[0])

    def predict_regression(self, image: ImageLike) -> Tuple[float, float]:
        if self.spec.head != Head.REGRESS_POS_FORCE:
            raise LabelKindError(f"{self.spec.arch.display_name} checkpoint is a classification model")
        position, force = self.predict_prepared(self.prepare(_pixels(image))[None])[0]
        return float(position), float(force)


class NetworkPredictor(Predictor):
    def __init__(self, net: Network, batch_size: int = 64):
        self.net = net
        self.spec = net.spec
        self.batch_size = batch_size

    @property
    def input_size(self) -> Tuple[int, int]:
        return self.net.input_shape[1], self.net.input_shape[2]

    def prepare(self, pixels: np.ndarray) -> np.ndarray:
        return area_resize(pixels, self.input_size)

    def outputs(self, batch: np.ndarray) -> np.ndarray:
        """Raw network outputs for NHWC prepared inputs."""
        chunks = [forward_batch(self.net, to_batch(batch[start:start + self.batch_size]))
                  for start in range(0, len(batch), self.batch_size)]
        if not chunks:
            return np.zeros((0, self.spec.n_outputs))
        return np.concatenate(chunks, axis=0)

    def predict_prepared(self, batch: np.ndarray) -> np.ndarray:
        out = self.outputs(batch)
        if self.spec.head == Head.CLASSIFY4:
            return np.argmax(out, axis=1)
        position, force = denormalize_targets(out)
        return np.stack([position, force], axis=1)


class ClassicalPredictor(Predictor):
    """SVM or KNN over standardized raw-pixel features."""

    def __init__(self, spec: ModelSpec, model: Union[SvmModel, KnnModel],
                 standardizer: FeatureStandardizer, feature_size: Sequence[int]):
        self.spec = spec
        self.model = model
        self.standardizer = standardizer
        self.feature_size = (int(feature_size[0]), int(feature_size[1]))

    def prepare(self, pixels: np.ndarray) -> np.ndarray:
        return raw_pixel_features(TactileImage(pixels), self.feature_size)

    def predict_prepared(self, batch: np.ndarray) -> np.ndarray:
        features = self.standardizer.transform(np.asarray(batch, dtype=np.float64))
        if isinstance(self.model, KnnModel):
            return np.array([knn_classify(self.model, f) for f in features], dtype=np.int64)
        return np.array([svm_predict(self.model, f) for f in features], dtype=np.int64)


def pack_network(net: Network, meta: Optional[dict] = None) -> Checkpoint:
    arrays = OrderedDict((f"param.{name}", t.data) for name, t in net.parameters().items())
    if net.normalizer is not None:
        arrays["normalizer.mean"] = net.normalizer.mean
        arrays["normalizer.std"] = net.normalizer.std
    info = {"input_shape": list(net.input_shape)}
    info.update(meta or {})
    return Checkpoint(net.spec, arrays, info)


def pack_classical(predictor: ClassicalPredictor, meta: Optional[dict] = None) -> Checkpoint:
    arrays = OrderedDict()
    arrays["standardizer.mean"] = predictor.standardizer.mean
    arrays["standardizer.std"] = predictor.standardizer.std
    info = {"feature_size": list(predictor.feature_size)}
    model = predictor.model
    if isinstance(model, KnnModel):
        arrays["knn.features"] = model.features
        arrays["knn.labels"] = model.labels.astype(np.float64)
        info.update({"k": model.k, "n_classes": model.n_classes})
    else:
        info.update({"n_classes": model.n_classes, "C": model.C,
                     "kernel": {"kind": model.kernel.kind, "gamma": model.kernel.gamma,
                                "degree": model.kernel.degree, "coef0": model.kernel.coef0},
                     "pairs": [[a, b] for a, b, _ in model.pairs]})
        for index, (_, _, binary) in enumerate(model.pairs):
            arrays[f"pair{index}.support_vectors"] = binary.support_vectors
            arrays[f"pair{index}.dual_coef"] = binary.dual_coef
            arrays[f"pair{index}.bias"] = np.array(binary.bias)
    info.update(meta or {})
    return Checkpoint(predictor.spec, arrays, info)


def load_model(checkpoint: Checkpoint) -> Predictor:
    """Rebuild the predictor stored in a checkpoint."""
    spec = checkpoint.spec
    try:
        if spec.arch.is_network:
            net = build_network(spec, tuple(checkpoint.meta["input_shape"]))
            net.load_parameters({name[len("param."):]: values
                                 for name, values in checkpoint.arrays.items()
                                 if name.startswith("param.")})
            if "normalizer.mean" in checkpoint.arrays:
                net.normalizer = ChannelNormalizer(checkpoint.array("normalizer.mean"),
                                                   checkpoint.array("normalizer.std"))
            return NetworkPredictor(net)

        standardizer = FeatureStandardizer(checkpoint.array("standardizer.mean"),
                                           checkpoint.array("standardizer.std"))
        if spec.arch == Arch.KNN:
            model = KnnModel(checkpoint.array("knn.features"),
                             checkpoint.array("knn.labels").astype(np.int64),
                             int(checkpoint.meta["k"]), int(checkpoint.meta["n_classes"]))
        else:
            kernel = Kernel(**checkpoint.meta["kernel"])
            pairs = []
            for index, (a, b) in enumerate(checkpoint.meta["pairs"]):
                pairs.append((int(a), int(b), BinarySvm(
                    support_vectors=checkpoint.array(f"pair{index}.support_vectors"),
                    dual_coef=checkpoint.array(f"pair{index}.dual_coef"),
                    bias=float(checkpoint.array(f"pair{index}.bias")),
                    kernel=kernel)))
            model = SvmModel(pairs, int(checkpoint.meta["n_classes"]), kernel,
                             float(checkpoint.meta["C"]))
        return ClassicalPredictor(spec, model, standardizer, checkpoint.meta["feature_size"])
    except KeyError as e:
        raise CheckpointError(f"Checkpoint for {spec.arch.value} is missing {e}")
