"""Tests for training loops, optimizers and evaluation."""

import numpy as np
import pytest

from autodiff import Tensor
from checkpoint import CheckpointStore
from datasets import (ArrayDataset, generate_classification_dataset, generate_regression_dataset)
from exceptions import DegenerateDataError, InvalidArgumentError, LabelKindError
from imaging import AugmentPolicy
from model_spec import Arch, Head, ModelSpec
from predictors import Predictor
from simgel import load_image
from splitting import split
from trainer import (Optimizer, OptimizerKind, TrainConfig, clip_gradients, evaluate_classification,
                     evaluate_regression, fit_classical, fit_network, global_norm, train)


def _toy_classification():
    images = np.stack([np.random.default_rng(1).random((16, 16, 3)),
                       np.random.default_rng(2).random((16, 16, 3))])
    return ArrayDataset(images, np.array([0, 1]), "classification", ["a", "b"])


def _toy_regression():
    images = np.random.default_rng(3).random((4, 16, 16, 3))
    labels = np.array([[20.0, 5.0], [30.0, 10.0], [40.0, 15.0], [25.0, 20.0]])
    return ArrayDataset(images, labels, "regression", ["a", "b", "c", "d"])


def _blob_features(rng, n_per_class=10, dim=6):
    centers = rng.normal(0.0, 4.0, size=(4, dim))
    X = np.concatenate([c + rng.normal(0.0, 0.5, size=(n_per_class, dim)) for c in centers])
    return ArrayDataset(X, np.repeat(np.arange(4), n_per_class), "classification")


class _LookupPredictor(Predictor):
    """Answers from a table keyed by image bytes, optionally constant or offset."""

    def __init__(self, manifest, head, constant=None, offset=0.0):
        self.spec = ModelSpec(Arch.CNN3, head)
        self.table = {load_image(manifest.image_path(r)).pixels.tobytes(): r.label
                      for r in manifest.records}
        self.constant = constant
        self.offset = offset

    def prepare(self, pixels):
        return np.atleast_1d(np.asarray(self.table[pixels.tobytes()], dtype=np.float64))

    def predict_prepared(self, batch):
        if self.spec.head == Head.CLASSIFY4:
            if self.constant is not None:
                return np.full(len(batch), self.constant)
            return batch[:, 0].astype(np.int64)
        return batch + self.offset


class TestTrainConfig:
    @pytest.mark.parametrize("overrides", [{"learning_rate": 0.0}, {"batch_size": 0}, {"epochs": 0},
                                           {"grad_clip": -1.0}, {"momentum": 1.0}])
    def test_invalid_values(self, overrides):
        with pytest.raises(InvalidArgumentError):
            TrainConfig(**overrides)

    def test_unknown_optimizer(self):
        with pytest.raises(ValueError):
            TrainConfig(optimizer="Adam")

    def test_default_clip_only_for_cnn5_regression(self):
        assert TrainConfig.default_clip(ModelSpec(Arch.CNN5, Head.REGRESS_POS_FORCE)) == 5.0
        assert TrainConfig.default_clip(ModelSpec(Arch.CNN5, Head.CLASSIFY4)) is None
        assert TrainConfig.default_clip(ModelSpec(Arch.CNN3, Head.REGRESS_POS_FORCE)) is None


class TestOptimizer:
    def test_plain_sgd(self):
        p = Tensor([1.0], requires_grad=True)
        p.grad = np.array([0.5])
        Optimizer({"p": p}, OptimizerKind.SGD, 0.1).step()
        assert p.data.tolist() == pytest.approx([0.95])

    def test_momentum_accumulates(self):
        p = Tensor([1.0], requires_grad=True)
        opt = Optimizer({"p": p}, OptimizerKind.SGD_MOMENTUM, 0.1, momentum=0.9)
        p.grad = np.array([0.5])
        opt.step()
        p.grad = np.array([0.5])
        opt.step()
        assert p.data.tolist() == pytest.approx([0.855])

    def test_clip_rescales_to_bound(self):
        a, b = Tensor([0.0], requires_grad=True), Tensor([0.0], requires_grad=True)
        a.grad, b.grad = np.array([3.0]), np.array([4.0])
        params = {"a": a, "b": b}
        assert global_norm(params) == pytest.approx(5.0)
        assert clip_gradients(params, 1.0) == pytest.approx(1.0)
        assert a.grad[0] / b.grad[0] == pytest.approx(0.75)

    def test_clip_leaves_small_gradients(self):
        a = Tensor([0.0], requires_grad=True)
        a.grad = np.array([0.5])
        assert clip_gradients({"a": a}, 1.0) == 0.5
        assert clip_gradients({"a": a}, None) == 0.5


class TestFitNetwork:
    def test_memorizes_two_images(self):
        data = _toy_classification()
        spec = ModelSpec(Arch.CNN3, Head.CLASSIFY4, {"widths": [4, 8], "seed": 0})
        config = TrainConfig(epochs=200, batch_size=2, learning_rate=0.05, optimizer=OptimizerKind.SGD,
                             input_size=(16, 16))
        result = fit_network(spec, data, data, config)
        assert not result.diverged
        assert len(result.history) == 200
        assert result.history[-1].train_loss < 0.01
        assert result.predictor.predict_prepared(data.inputs).tolist() == [0, 1]
        assert result.checkpoint.meta["kind"] == "classification"

    def test_divergence_is_reported(self):
        spec = ModelSpec(Arch.CNN3, Head.REGRESS_POS_FORCE, {"widths": [2, 2]})
        config = TrainConfig(epochs=10, batch_size=4, learning_rate=1e3, optimizer=OptimizerKind.SGD)
        result = fit_network(spec, _toy_regression(), None, config)
        assert result.diverged
        assert result.checkpoint is None
        report = result.divergence
        assert report.threshold == 1e3
        assert not np.isfinite(report.loss) or report.loss > 1e3
        assert len(report.history) == report.epoch - 1
        assert "diverged" in report.message()

    def test_same_seed_same_model(self):
        data = _toy_classification()
        spec = ModelSpec(Arch.CNN3, Head.CLASSIFY4, {"widths": [2, 4]})
        config = TrainConfig(epochs=3, batch_size=1, augment=AugmentPolicy(flip_lr=True, brightness_jitter=0.05))
        store = CheckpointStore()
        first = fit_network(spec, data, data, config)
        second = fit_network(spec, data, data, config)
        assert [r.train_loss for r in first.history] == [r.train_loss for r in second.history]
        assert store.encode(first.checkpoint) == store.encode(second.checkpoint)

    def test_gradient_clip_bounds_every_step(self):
        spec = ModelSpec(Arch.CNN5, Head.REGRESS_POS_FORCE, {"widths": [2, 2, 2, 2]})
        config = TrainConfig(epochs=2, batch_size=2, grad_clip=1e-3)
        result = fit_network(spec, _toy_regression(), None, config)
        assert not result.diverged
        assert all(row.max_grad_norm <= 1e-3 + 1e-12 for row in result.history)
        assert all(np.isnan(row.val_metric) for row in result.history)
        assert result.best_epoch == 2

    def test_head_must_match_labels(self):
        with pytest.raises(LabelKindError):
            fit_network(ModelSpec(Arch.CNN3, Head.CLASSIFY4), _toy_regression(), None, TrainConfig(epochs=1))

    def test_geometric_augmentation_refused_for_regression(self):
        config = TrainConfig(epochs=1, augment=AugmentPolicy(geometric_allowed=True))
        with pytest.raises(InvalidArgumentError):
            fit_network(ModelSpec(Arch.CNN3, Head.REGRESS_POS_FORCE, {"widths": [2, 2]}),
                        _toy_regression(), None, config)


class TestFitClassical:
    def test_knn(self, rng):
        data = _blob_features(rng)
        result = fit_classical(ModelSpec(Arch.KNN, Head.CLASSIFY4, {"k": 1}), data, data, TrainConfig())
        assert result.history[0].train_loss == 0.0
        assert result.history[0].val_metric == 1.0
        assert result.checkpoint.spec.arch == Arch.KNN

    def test_svm_rbf(self, rng):
        data = _blob_features(rng)
        result = fit_classical(ModelSpec(Arch.SVM_RBF, Head.CLASSIFY4), data, None, TrainConfig())
        assert result.history[0].train_loss == 0.0
        assert np.isnan(result.history[0].val_metric)
        assert len(result.predictor.model.pairs) == 6

    def test_single_class_rejected(self, rng):
        data = ArrayDataset(rng.normal(size=(5, 3)), np.zeros(5, dtype=np.int64), "classification")
        with pytest.raises(DegenerateDataError):
            fit_classical(ModelSpec(Arch.SVM_POLY, Head.CLASSIFY4), data, None, TrainConfig())


class TestEvaluate:
    @pytest.fixture
    def nuts(self, tmp_path, small_geometry):
        return generate_classification_dataset(3, 5, tmp_path / "nuts", geometry=small_geometry, workers=2)

    @pytest.fixture
    def presses(self, tmp_path, small_geometry):
        return generate_regression_dataset(4, 5, tmp_path / "presses", geometry=small_geometry, workers=2)

    def test_perfect_classifier(self, nuts):
        report = evaluate_classification(_LookupPredictor(nuts, Head.CLASSIFY4), nuts)
        assert report.overall_accuracy == 1.0
        assert report.n_samples == 12

    def test_constant_classifier(self, nuts):
        report = evaluate_classification(_LookupPredictor(nuts, Head.CLASSIFY4, constant=2), nuts)
        assert report.overall_accuracy == pytest.approx(0.25)
        assert report.per_class_accuracy.tolist() == [0.0, 0.0, 1.0, 0.0]

    def test_offset_regressor(self, presses):
        report = evaluate_regression(_LookupPredictor(presses, Head.REGRESS_POS_FORCE,
                                                      offset=np.array([2.0, -1.0])), presses)
        assert report.mae_position_mm == pytest.approx(2.0)
        assert report.mae_force_n == pytest.approx(1.0)

    def test_wrong_head(self, nuts, presses):
        with pytest.raises(LabelKindError):
            evaluate_regression(_LookupPredictor(nuts, Head.CLASSIFY4), nuts)
        with pytest.raises(LabelKindError):
            evaluate_classification(_LookupPredictor(presses, Head.REGRESS_POS_FORCE), presses)

    def test_train_knn_then_evaluate_checkpoint(self, nuts):
        train_m, val_m = split(nuts, 0.8, seed=0)
        config = TrainConfig(feature_size=(8, 6))
        result = train(ModelSpec(Arch.KNN, Head.CLASSIFY4, {"k": 1}), (train_m, val_m), config)
        assert len(result.checkpoint.array("knn.features")) == 8
        report = evaluate_classification(result.checkpoint, val_m)
        assert report.n_samples == 4
        with pytest.raises(LabelKindError):
            evaluate_regression(result.checkpoint, val_m)

    def test_train_regression_network_per_indenter(self, presses):
        train_m, val_m = presses.with_split("train"), presses.with_split("val")
        spec = ModelSpec(Arch.CNN3, Head.REGRESS_POS_FORCE, {"widths": [2, 2]})
        config = TrainConfig(epochs=2, batch_size=2, input_size=(16, 16), indenter="Cylinder")
        result = train(spec, (train_m, val_m), config)
        assert not result.diverged
        assert result.checkpoint.meta["input_shape"] == [3, 16, 16]
        report = evaluate_regression(result.checkpoint, val_m)
        assert report.n_samples == len(val_m)
        assert np.isfinite(report.mae_position_mm) and np.isfinite(report.mae_force_n)

    def test_evaluate_reloaded_checkpoint_file(self, nuts, tmp_path):
        train_m, val_m = split(nuts, 0.8, seed=0)
        result = train(ModelSpec(Arch.KNN, Head.CLASSIFY4, {"k": 1}), (train_m, val_m),
                       TrainConfig(feature_size=(8, 6)))
        store = CheckpointStore()
        store.save(result.checkpoint, tmp_path / "knn.ftckpt")
        direct = evaluate_classification(result.checkpoint, val_m)
        reloaded = evaluate_classification(store.load(tmp_path / "knn.ftckpt"), val_m)
        assert reloaded.overall_accuracy == direct.overall_accuracy
