"""Management of the member runs of an ablation."""

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import psutil

# Handle imports - try relative first, then absolute
try:
    from .datasets import ArrayDataset
    from .experiment import ExperimentRun, RunStatus
    from .logger import Logger
    from .model_spec import ModelSpec
    from .reports import MetricsReport
    from .trainer import TrainConfig
except ImportError:
    from datasets import ArrayDataset
    from experiment import ExperimentRun, RunStatus
    from logger import Logger
    from model_spec import ModelSpec
    from reports import MetricsReport
    from trainer import TrainConfig


class ExperimentManager:
    """Creates runs with isolated output directories and executes them."""

    def __init__(self, output_root):
        self.output_root = output_root
        self.logger = Logger.get_logger(__name__)
        self.runs: Dict[str, ExperimentRun] = {}
        self.next_id = 1

    def create_run(self, spec: ModelSpec, train_config: TrainConfig) -> str:
        run_id = f"run_{self.next_id}"
        self.next_id += 1
        output_dir = self._unique_dir(spec.arch.value)
        self.runs[run_id] = ExperimentRun(run_id, spec, train_config, output_dir)
        self.logger.info(f"Created run {run_id} for {spec.arch.display_name} in {output_dir}")
        return run_id

    def _unique_dir(self, stem: str):
        taken = {run.output_dir.name for run in self.runs.values()}
        name, suffix = stem, 2
        while name in taken:
            name = f"{stem}_{suffix}"
            suffix += 1
        return Path(self.output_root) / name

    def get_run(self, run_id: str) -> Optional[ExperimentRun]:
        return self.runs.get(run_id)

    def get_all_runs(self) -> List[ExperimentRun]:
        """Runs in creation order."""
        return list(self.runs.values())

    @staticmethod
    def worker_count(requested: int = 0) -> int:
        if requested > 0:
            return requested
        return psutil.cpu_count(logical=False) or 1

    def run_all(self, datasets: Dict[bool, Tuple[ArrayDataset, Optional[ArrayDataset]]],
                parallel: bool = False, workers: int = 0) -> List[ExperimentRun]:
        """Execute pending runs.

        `datasets` maps "is a network" to the (train, val) arrays prepared
        for that family of learners.
        """
        pending = [run for run in self.runs.values() if run.status == RunStatus.PENDING]

        def execute(run: ExperimentRun) -> bool:
            train_set, val_set = datasets[run.spec.arch.is_network]
            return run.execute(train_set, val_set)

        if parallel and len(pending) > 1:
            count = min(self.worker_count(workers), len(pending))
            self.logger.info(f"Running {len(pending)} experiments on {count} workers")
            with ThreadPoolExecutor(max_workers=count) as pool:
                list(pool.map(execute, pending))
        else:
            for run in pending:
                execute(run)
        return self.get_all_runs()

    def results(self) -> List[Tuple[str, MetricsReport]]:
        """(learner name, report) of completed runs, in creation order."""
        return [(run.name, run.report) for run in self.runs.values()
                if run.status == RunStatus.COMPLETED]

    def failures(self) -> List[ExperimentRun]:
        return [run for run in self.runs.values()
                if run.status in (RunStatus.FAILED, RunStatus.DIVERGED)]
