"""Tests for ablation runs and their manager."""

import numpy as np

from datasets import ArrayDataset
from experiment import CHECKPOINT_NAME, HISTORY_NAME, ExperimentRun, RunStatus
from experiment_manager import ExperimentManager
from model_spec import Arch, Head, ModelSpec
from trainer import OptimizerKind, TrainConfig


def _image_sets():
    rng = np.random.default_rng(4)
    images = rng.random((8, 16, 16, 3))
    labels = np.array([0, 1, 2, 3, 0, 1, 2, 3])
    data = ArrayDataset(images, labels, "classification")
    return data, data


def _feature_sets():
    rng = np.random.default_rng(5)
    centers = rng.normal(0.0, 4.0, size=(4, 5))
    X = np.concatenate([c + rng.normal(0.0, 0.3, size=(6, 5)) for c in centers])
    data = ArrayDataset(X, np.repeat(np.arange(4), 6), "classification")
    return data, data


def _config(**overrides):
    values = {"epochs": 2, "batch_size": 4, "learning_rate": 0.01}
    values.update(overrides)
    return TrainConfig(**values)


class TestExperimentRun:
    def test_completed_run_writes_outputs(self, output_dir):
        run = ExperimentRun("run_1", ModelSpec(Arch.CNN3, Head.CLASSIFY4, {"widths": [2, 2]}), _config(),
                            output_dir / "Cnn3")
        train_set, val_set = _image_sets()
        assert run.execute(train_set, val_set)
        assert run.status == RunStatus.COMPLETED
        assert (output_dir / "Cnn3" / CHECKPOINT_NAME).is_file()
        lines = (output_dir / "Cnn3" / HISTORY_NAME).read_text().splitlines()
        assert lines[0] == "epoch,train_loss,val_metric" and len(lines) == 3
        assert run.report.n_samples == 8
        status = run.get_status()
        assert status["status"] == "completed" and status["epochs"] == 2

    def test_diverged_run(self, output_dir):
        rng = np.random.default_rng(6)
        data = ArrayDataset(rng.random((4, 16, 16, 3)),
                            np.array([[20.0, 5.0], [30.0, 10.0], [40.0, 15.0], [25.0, 20.0]]), "regression")
        run = ExperimentRun("run_1", ModelSpec(Arch.CNN3, Head.REGRESS_POS_FORCE, {"widths": [2, 2]}),
                            _config(epochs=10, learning_rate=1e3, optimizer=OptimizerKind.SGD),
                            output_dir / "Cnn3")
        assert not run.execute(data, None)
        assert run.status == RunStatus.DIVERGED
        assert not (output_dir / "Cnn3" / CHECKPOINT_NAME).exists()

    def test_failed_run_keeps_error(self, output_dir):
        rng = np.random.default_rng(7)
        single_class = ArrayDataset(rng.normal(size=(4, 3)), np.zeros(4, dtype=np.int64), "classification")
        run = ExperimentRun("run_1", ModelSpec(Arch.SVM_RBF, Head.CLASSIFY4), _config(), output_dir / "svm")
        assert not run.execute(single_class, None)
        assert run.status == RunStatus.FAILED
        assert "single class" in run.get_status()["error"]


class TestExperimentManager:
    def test_run_ids_and_unique_dirs(self, output_dir):
        manager = ExperimentManager(output_dir)
        first = manager.create_run(ModelSpec(Arch.KNN, Head.CLASSIFY4), _config())
        second = manager.create_run(ModelSpec(Arch.KNN, Head.CLASSIFY4, {"k": 3}), _config())
        assert (first, second) == ("run_1", "run_2")
        assert manager.get_run("run_1").output_dir.name == "Knn"
        assert manager.get_run("run_2").output_dir.name == "Knn_2"
        assert manager.get_run("run_9") is None

    def test_worker_count(self):
        assert ExperimentManager.worker_count(3) == 3
        assert ExperimentManager.worker_count(0) >= 1

    def test_results_in_creation_order(self, output_dir):
        manager = ExperimentManager(output_dir)
        specs = [ModelSpec(Arch.SVM_RBF, Head.CLASSIFY4), ModelSpec(Arch.KNN, Head.CLASSIFY4, {"k": 1}),
                 ModelSpec(Arch.CNN3, Head.CLASSIFY4, {"widths": [2, 2]})]
        for spec in specs:
            manager.create_run(spec, _config())
        manager.run_all({True: _image_sets(), False: _feature_sets()}, parallel=True, workers=2)
        assert [name for name, _ in manager.results()] == ["SVM (rbf)", "KNN", "3-layer CNN"]
        assert manager.failures() == []
        assert manager.results()[1][1].overall_accuracy == 1.0

    def test_sequential_and_parallel_agree(self, tmp_path):
        outcomes = []
        for parallel in (False, True):
            manager = ExperimentManager(tmp_path / str(parallel))
            manager.create_run(ModelSpec(Arch.KNN, Head.CLASSIFY4, {"k": 1}), _config())
            manager.create_run(ModelSpec(Arch.CNN3, Head.CLASSIFY4, {"widths": [2, 2]}), _config())
            manager.run_all({True: _image_sets(), False: _feature_sets()}, parallel=parallel)
            outcomes.append([report.overall_accuracy for _, report in manager.results()])
        assert outcomes[0] == outcomes[1]

    def test_completed_runs_not_repeated(self, output_dir):
        manager = ExperimentManager(output_dir)
        manager.create_run(ModelSpec(Arch.KNN, Head.CLASSIFY4, {"k": 1}), _config())
        manager.run_all({False: _feature_sets()})
        manager.run_all({})
        assert manager.get_run("run_1").status == RunStatus.COMPLETED
