"""Command layer for FinRay Tactile Lab: one method per experiment recipe."""

from pathlib import Path
from typing import Dict, List, Optional, Tuple

# Handle imports - try relative first, then absolute
try:
    from . import autodiff
    from .checkpoint import CheckpointStore
    from .config import Config
    from .datasets import (DatasetManifest, generate_classification_dataset,
                           generate_regression_dataset, load_arrays, load_manifest)
    from .exceptions import ConfigurationError, DataError, DivergenceError
    from .experiment import CHECKPOINT_NAME, HISTORY_NAME
    from .experiment_manager import ExperimentManager
    from .frame_reader import iter_frames
    from .imaging import unwarp
    from .logger import Logger
    from .model_spec import ModelSpec
    from .predictors import load_model
    from .reports import MetricsReport, save_scatter_svg, write_history_csv, write_report_files
    from .simgel import save_png
    from .trainer import (TrainResult, evaluate_classification, evaluate_regression,
                          input_preparer, split, train)
except ImportError:
    import autodiff
    from checkpoint import CheckpointStore
    from config import Config
    from datasets import (DatasetManifest, generate_classification_dataset,
                          generate_regression_dataset, load_arrays, load_manifest)
    from exceptions import ConfigurationError, DataError, DivergenceError
    from experiment import CHECKPOINT_NAME, HISTORY_NAME
    from experiment_manager import ExperimentManager
    from frame_reader import iter_frames
    from imaging import unwarp
    from logger import Logger
    from model_spec import ModelSpec
    from predictors import load_model
    from reports import MetricsReport, save_scatter_svg, write_history_csv, write_report_files
    from simgel import save_png
    from trainer import (TrainResult, evaluate_classification, evaluate_regression,
                         input_preparer, split, train)

SCATTER_NAME = "scatter.svg"


class ExperimentAPI:
    """Runs simulate / train / eval / ablation / grad-check / unwarp against a Config."""

    def __init__(self, config: Config):
        self.config = config
        self.logger = Logger.get_logger(__name__)
        self.store = CheckpointStore()

    @property
    def output_dir(self) -> Path:
        return self.config.output_dir

    def _manifest(self) -> DatasetManifest:
        path = self.config.get("dataset", "manifest")
        if not path:
            raise ConfigurationError("No dataset manifest given (--manifest PATH)")
        return load_manifest(path)

    def _splits(self, manifest: DatasetManifest) -> Tuple[DatasetManifest, DatasetManifest]:
        """Split tags from generation, or a fresh seeded split when asked or missing."""
        train_part = manifest.with_split("train")
        if self.config.get("train", "resplit") or len(train_part) == 0:
            return split(manifest, self.config.get("train", "train_fraction"),
                         self.config.get("train", "seed"))
        return train_part, manifest.with_split("val")

    def _calibration(self):
        return self.config.calibration(raw_size=(self.config.get("sensor", "rows"),
                                                 self.config.get("sensor", "cols")))

    def simulate(self) -> DatasetManifest:
        values = self.config.sections["simulate"]
        options = {"geometry": self.config.sensor_geometry(), "noise_std": values["noise_std"],
                   "train_fraction": values["train_fraction"], "write_raw": values["write_raw"],
                   "workers": values["workers"] or None}
        kind = values["kind"]
        self.logger.info(f"Simulating {kind} dataset: n={values['n']}, seed={values['seed']}")
        if kind == "classification":
            return generate_classification_dataset(values["n"], values["seed"], self.output_dir, **options)
        if kind == "regression":
            return generate_regression_dataset(values["n"], values["seed"], self.output_dir, **options)
        raise ConfigurationError(f"Unknown dataset kind {kind!r} (classification or regression)")

    def train(self) -> TrainResult:
        manifest = self._manifest()
        spec = self.config.model_spec(head=self.config.head(manifest.kind))
        train_config = self.config.train_config(spec)
        result = train(spec, self._splits(manifest), train_config, self._calibration())
        write_history_csv(self.output_dir / HISTORY_NAME, result.history)
        if result.diverged:
            raise DivergenceError(result.divergence.message(), result.divergence)
        self.store.save(result.checkpoint, self.output_dir / CHECKPOINT_NAME)
        self.logger.info(f"{spec.arch.display_name}: best epoch {result.best_epoch} "
                         f"of {len(result.history)}")
        return result

    def evaluate(self) -> Tuple[MetricsReport, str]:
        path = self.config.get("eval", "checkpoint")
        if not path:
            raise ConfigurationError("No checkpoint given (--checkpoint PATH)")
        checkpoint = self.store.load(path)
        manifest = self._manifest()
        split_tag = self.config.get("eval", "split")
        if split_tag != "all":
            manifest = manifest.with_split(split_tag)
        if manifest.kind == "regression":
            manifest = manifest.for_indenter(self.config.get("train", "indenter"))

        predictor = load_model(checkpoint)
        calibration = self._calibration()
        if manifest.kind == "classification":
            report = evaluate_classification(predictor, manifest, calibration)
        else:
            report = evaluate_regression(predictor, manifest, calibration)
        rows = [(checkpoint.spec.arch.display_name, report)]
        table = write_report_files(self.output_dir, rows, manifest.kind)
        if manifest.kind == "regression":
            save_scatter_svg(self.output_dir / SCATTER_NAME, report.targets, report.predictions,
                             title=checkpoint.spec.arch.display_name)
        return report, table

    def ablation(self) -> Tuple[List[Tuple[str, MetricsReport]], str]:
        manifest = self._manifest()
        head = self.config.head(manifest.kind)
        archs = self.config.archs()
        if manifest.kind == "regression":
            dropped = [a for a in archs if not a.is_network]
            if dropped:
                self.logger.warning("Skipping classification-only learners for regression: "
                                    + ", ".join(a.display_name for a in dropped))
            archs = [a for a in archs if a.is_network]
        if not archs:
            raise ConfigurationError("Ablation needs at least one learner")

        specs: List[ModelSpec] = [self.config.model_spec(arch, head) for arch in archs]
        train_part, val_part = self._splits(manifest)
        if manifest.kind == "regression":
            indenter = self.config.get("train", "indenter")
            train_part, val_part = train_part.for_indenter(indenter), val_part.for_indenter(indenter)
        calibration = self._calibration()

        manager = ExperimentManager(self.output_dir)
        datasets = {}
        for spec in specs:
            train_config = self.config.train_config(spec)
            family = spec.arch.is_network
            if family not in datasets:
                prepare = input_preparer(spec, train_config)
                datasets[family] = (
                    load_arrays(train_part, prepare=prepare, calibration=calibration),
                    load_arrays(val_part, prepare=prepare, calibration=calibration)
                    if len(val_part) else None)
            manager.create_run(spec, train_config)

        manager.run_all(datasets, parallel=self.config.get("ablation", "parallel"),
                        workers=self.config.get("ablation", "workers"))
        rows = manager.results()
        table = write_report_files(self.output_dir, rows, manifest.kind) if rows else ""
        failures = manager.failures()
        if failures:
            first = failures[0]
            message = f"{len(failures)} ablation run(s) did not complete; first: {first.name}"
            if first.result is not None and first.result.diverged:
                raise DivergenceError(f"{message}: {first.result.divergence.message()}",
                                      first.result.divergence)
            raise type(first.error)(f"{message}: {first.error}")
        return rows, table

    def grad_check(self) -> Dict[str, autodiff.GradCheckReport]:
        values = self.config.sections["gradcheck"]
        return autodiff.check_primitives(values["seeds"], values["eps"], values["tol"])

    def unwarp_frames(self) -> int:
        """Unwarp every frame of unwarp.input into the output directory."""
        source = self.config.get("unwarp", "input")
        if not source:
            raise ConfigurationError("No frame directory given (--frames DIR)")
        frames = list(iter_frames(source))
        if not frames:
            raise DataError(f"No frames found in {source}")
        calibration = self.config.calibration(raw_size=frames[0][1].pixels.shape[:2])
        if calibration is None:
            raise ConfigurationError("Unwarping needs calibration.enabled = true")
        target = self.output_dir / "unwarped"
        try:
            target.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise DataError(f"Cannot create output directory {target}: {e}")
        for path, frame in frames:
            save_png(unwarp(frame, calibration), target / f"{path.stem}.png")
        self.logger.info(f"Unwarped {len(frames)} frames into {target}")
        return len(frames)
