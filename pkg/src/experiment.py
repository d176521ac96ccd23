"""A single training/evaluation run with its own output directory."""

from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional

# Handle imports - try relative first, then absolute
try:
    from .checkpoint import CheckpointStore
    from .datasets import ArrayDataset
    from .exceptions import FinRayError
    from .logger import Logger
    from .model_spec import Head, ModelSpec
    from .reports import MetricsReport, classification_report, regression_report, write_history_csv
    from .trainer import TrainConfig, TrainResult, fit_classical, fit_network
except ImportError:
    from checkpoint import CheckpointStore
    from datasets import ArrayDataset
    from exceptions import FinRayError
    from logger import Logger
    from model_spec import Head, ModelSpec
    from reports import MetricsReport, classification_report, regression_report, write_history_csv
    from trainer import TrainConfig, TrainResult, fit_classical, fit_network

CHECKPOINT_NAME = "checkpoint.ftckpt"
HISTORY_NAME = "history.csv"


class RunStatus(str, Enum):
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    DIVERGED = "diverged"
    FAILED = "failed"


class ExperimentRun:
    """Trains one learner on prepared arrays and scores it on the validation set."""

    def __init__(self, run_id: str, spec: ModelSpec, train_config: TrainConfig, output_dir):
        self.id = run_id
        self.spec = spec
        self.train_config = train_config
        self.output_dir = Path(output_dir)
        self.logger = Logger.get_logger(__name__)
        self.store = CheckpointStore()

        self.status = RunStatus.PENDING
        self.result: Optional[TrainResult] = None
        self.report: Optional[MetricsReport] = None
        self.error: Optional[FinRayError] = None

    @property
    def name(self) -> str:
        return self.spec.arch.display_name

    def execute(self, train_set: ArrayDataset, val_set: Optional[ArrayDataset]) -> bool:
        """Train, persist, and evaluate; False if the run diverged or failed."""
        self.status = RunStatus.RUNNING
        self.logger.info(f"Run {self.id} ({self.name}) started")
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
            fit = fit_network if self.spec.arch.is_network else fit_classical
            self.result = fit(self.spec, train_set, val_set, self.train_config)
            write_history_csv(self.output_dir / HISTORY_NAME, self.result.history)

            if self.result.diverged:
                self.status = RunStatus.DIVERGED
                self.logger.warning(f"Run {self.id} ({self.name}): {self.result.divergence.message()}")
                return False

            self.store.save(self.result.checkpoint, self.output_dir / CHECKPOINT_NAME)
            scored = val_set if val_set is not None and len(val_set) else train_set
            predictions = self.result.predictor.predict_prepared(scored.inputs)
            if self.spec.head == Head.CLASSIFY4:
                self.report = classification_report(scored.labels, predictions)
            else:
                self.report = regression_report(scored.labels, predictions)
            self.status = RunStatus.COMPLETED
            self.logger.info(f"Run {self.id} ({self.name}) completed")
            return True
        except FinRayError as e:
            self.status = RunStatus.FAILED
            self.error = e
            self.logger.error(f"Run {self.id} ({self.name}) failed: {e}")
            return False
        except OSError as e:
            self.status = RunStatus.FAILED
            self.error = FinRayError(f"Run {self.id} output error: {e}")
            self.logger.error(f"Run {self.id} ({self.name}) failed: {e}")
            return False

    def get_status(self) -> Dict[str, Any]:
        status = {
            'id': self.id,
            'learner': self.name,
            'status': self.status.value,
            'output_dir': str(self.output_dir),
        }
        if self.result is not None:
            status['epochs'] = len(self.result.history)
            status['best_epoch'] = self.result.best_epoch
        if self.error is not None:
            status['error'] = str(self.error)
        return status
